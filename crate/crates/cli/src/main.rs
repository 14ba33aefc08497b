//! `hitl-gan`: training, maps and the evaluation service from the command line.
//!
//! Exit codes: 0 success, 1 error, 2 usage, 3 waiting for ratings (rerun the
//! same command later), 4 evaluation service unreachable.

mod fields;
mod pca;
mod serve;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const EXIT_ERROR: u8 = 1;
pub const EXIT_PENDING: u8 = 3;
pub const EXIT_UNREACHABLE: u8 = 4;

/// How a command finished, when it did not fail outright.
pub enum Outcome {
    Done,
    Pending(String),
    Unreachable(String),
}

/// Where ratings come from: `simulated` or the base URL of an evaluation service.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleArg {
    Simulated,
    Service(String),
}

impl std::str::FromStr for OracleArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "simulated" {
            Ok(OracleArg::Simulated)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(OracleArg::Service(s.to_string()))
        } else {
            Err(format!("expected `simulated` or a service URL, got `{s}`"))
        }
    }
}

#[derive(Parser)]
#[command(name = "hitl-gan", version, about = "Train a conditional generator from paired ratings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) training into an output directory.
    Train(train::TrainArgs),
    /// Rate every point of a grid and write the posterior map as CSV.
    Map(fields::MapArgs),
    /// Estimate per-datum gradients for a checkpoint and write them as CSV.
    Gradients(fields::GradientArgs),
    /// Run the evaluation service.
    Serve(serve::ServeArgs),
    /// Answer pending service tasks with the simulated oracle.
    Rate(serve::RateArgs),
    /// Show the completion state of a service batch.
    Status(serve::StatusArgs),
    /// Fit and apply PCA standardization of feature data.
    #[command(subcommand)]
    Pca(pca::PcaCommand),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Map(a) => fields::map(a),
        Command::Gradients(a) => fields::gradients(a),
        Command::Serve(a) => serve::serve(a),
        Command::Rate(a) => serve::rate(a),
        Command::Status(a) => serve::status(a),
        Command::Pca(c) => pca::run(c),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Pending(msg)) => {
            eprintln!("waiting for ratings: {msg}");
            ExitCode::from(EXIT_PENDING)
        }
        Ok(Outcome::Unreachable(msg)) => {
            eprintln!("evaluation service unreachable: {msg}");
            ExitCode::from(EXIT_UNREACHABLE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// Opens `path` for CSV output, or stdout when absent.
pub fn csv_writer(path: Option<&PathBuf>) -> anyhow::Result<csv::Writer<Box<dyn std::io::Write>>> {
    let sink: Box<dyn std::io::Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

pub fn load_config(path: Option<&PathBuf>) -> anyhow::Result<hitl_gan::ExperimentConfig> {
    Ok(match path {
        Some(p) => hitl_gan::ExperimentConfig::load(p)?,
        None => hitl_gan::ExperimentConfig::default(),
    })
}
