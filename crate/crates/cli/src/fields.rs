use std::path::PathBuf;

use anyhow::{anyhow, bail};
use clap::Args;
use hitl_gan::data::make_grid;
use hitl_gan::maps::{gradient_field, posterior_map, GradientRow, MapRow};
use hitl_gan::queue::{AbsoluteQuery, AggregationPolicy, TaskSpec};
use hitl_gan::rundir::{Checkpoint, PauseReason};
use hitl_gan::trainer::training_prior;
use hitl_gan::{ClassLabel, Question, SimulatedOracle};
use hitl_gan_service::{ClientError, ServiceClient, ServiceEvaluator};

use crate::{csv_writer, load_config, OracleArg, Outcome};

/// `naturalness` or `class:<k>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldArg(pub Question);

impl std::str::FromStr for FieldArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "naturalness" {
            return Ok(FieldArg(Question::Naturalness));
        }
        s.strip_prefix("class:")
            .and_then(|k| k.parse().ok())
            .map(|k| FieldArg(Question::ClassAcceptability(ClassLabel(k))))
            .ok_or_else(|| format!("expected `naturalness` or `class:<k>`, got `{s}`"))
    }
}

/// Parses `lo:hi,lo:hi,...`.
pub fn parse_bounds(s: &str) -> anyhow::Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|axis| {
            let (lo, hi) = axis.split_once(':').ok_or_else(|| anyhow!("bounds axis `{axis}` is not `lo:hi`"))?;
            Ok((lo.trim().parse()?, hi.trim().parse()?))
        })
        .collect()
}

/// Parses `7x7`, `7,7`, or a single count used for every axis.
pub fn parse_resolution(s: &str, dims: usize) -> anyhow::Result<Vec<usize>> {
    let parts: Vec<usize> = s.split(['x', ',']).map(|p| p.trim().parse()).collect::<Result<_, _>>()?;
    Ok(if parts.len() == 1 { vec![parts[0]; dims] } else { parts })
}

#[derive(Args)]
pub struct MapArgs {
    /// `naturalness` or `class:<k>`.
    #[arg(long)]
    field: FieldArg,
    /// Grid bounds per axis, e.g. `-3:3,-3:3`.
    #[arg(long, allow_hyphen_values = true, default_value = "-3:3,-3:3")]
    bounds: String,
    /// Points per axis, e.g. `7x7`.
    #[arg(long, default_value = "7x7")]
    resolution: String,
    /// Experiment file naming the simulated landscape and service settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "simulated")]
    oracle: OracleArg,
    /// Raters per grid point when rating through the service.
    #[arg(long)]
    min_raters: Option<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn question_columns(q: Question) -> [String; 2] {
    match q {
        Question::Naturalness => ["naturalness".into(), String::new()],
        Question::ClassAcceptability(c) => ["class_acceptability".into(), c.index().to_string()],
    }
}

fn write_map(rows: &[MapRow], dims: usize, out: Option<&PathBuf>) -> anyhow::Result<()> {
    let mut w = csv_writer(out)?;
    let mut header: Vec<String> = (1..=dims).map(|i| format!("x{i}")).collect();
    header.extend(["kind", "class", "posterior", "continuous"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.x.iter().map(f64::to_string).collect();
        rec.extend(question_columns(r.question));
        rec.push(format!("{:.2}", r.posterior));
        rec.push(r.continuous.map_or(String::new(), |c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn client_outcome(e: ClientError) -> anyhow::Result<Outcome> {
    match e {
        ClientError::Unreachable(d) => Ok(Outcome::Unreachable(d)),
        other => Err(other.into()),
    }
}

pub fn map(args: MapArgs) -> anyhow::Result<Outcome> {
    let cfg = load_config(args.config.as_ref())?;
    let bounds = parse_bounds(&args.bounds)?;
    let resolution = parse_resolution(&args.resolution, bounds.len())?;
    let dims = bounds.len();
    let grid = make_grid(bounds, resolution)?;
    let question = args.field.0;
    match &args.oracle {
        OracleArg::Simulated => {
            let oracle = SimulatedOracle::new(cfg.oracle_config()?)?;
            if let Question::ClassAcceptability(c) = question {
                if c.index() >= oracle.num_classes() {
                    bail!("class {} out of range for {} classes", c.index(), oracle.num_classes());
                }
            }
            let rows = posterior_map(&grid, question, &oracle, Some(&oracle))?;
            write_map(&rows, dims, args.out.as_ref())?;
            Ok(Outcome::Done)
        }
        OracleArg::Service(url) => {
            let client = ServiceClient::new(url)?;
            let points = grid.points();
            let tasks: Vec<TaskSpec> = points
                .iter()
                .enumerate()
                .map(|(i, x)| AbsoluteQuery::new(format!("map.{i}"), x.clone(), question).into())
                .collect();
            let policy = AggregationPolicy {
                min_raters: args.min_raters.unwrap_or(cfg.service.map_min_raters),
                ..AggregationPolicy::default()
            };
            let batch = match client.enqueue(&tasks, Some(&policy)) {
                Ok(b) => b.batch_id,
                Err(e) => return client_outcome(e),
            };
            let status = match client.poll(&batch) {
                Ok(s) => s,
                Err(e) => return client_outcome(e),
            };
            let Some(responses) = status.responses else {
                return Ok(Outcome::Pending(format!(
                    "map batch {batch}: {}/{} points rated by {} raters",
                    status.complete, status.total, policy.min_raters
                )));
            };
            let rows: Vec<MapRow> = points
                .into_iter()
                .zip(responses)
                .map(|(x, r)| MapRow { x, question, posterior: r.value, continuous: None })
                .collect();
            write_map(&rows, dims, args.out.as_ref())?;
            Ok(Outcome::Done)
        }
    }
}

#[derive(Args)]
pub struct GradientArgs {
    /// Generator checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment file supplying N, σ, the seed and the landscape.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "simulated")]
    oracle: OracleArg,
    /// Perturbations per datum.
    #[arg(short = 'R', long = "perturbations", default_value_t = 500)]
    r: usize,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_gradients(rows: &[GradientRow], dims: usize, out: Option<&PathBuf>) -> anyhow::Result<()> {
    let mut w = csv_writer(out)?;
    let mut header: Vec<String> = (1..=dims).map(|i| format!("x{i}")).collect();
    header.push("class".into());
    header.extend((1..=dims).map(|i| format!("dS_dx{i}")));
    header.extend((1..=dims).map(|i| format!("dC_dx{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.x.iter().map(f64::to_string).collect();
        rec.push(r.class.index().to_string());
        rec.extend(r.naturalness.iter().map(f64::to_string));
        rec.extend(r.class_acceptability.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn gradients(args: GradientArgs) -> anyhow::Result<Outcome> {
    let mut cfg = load_config(args.config.as_ref())?;
    let params = Checkpoint::load(&args.checkpoint)?.params()?;
    let arch = params.arch().clone();
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    let sigma = args.sigma.unwrap_or(cfg.train.sigma);
    let prior = training_prior(&cfg.train, &arch, 0)?;
    let (_, result) = match &args.oracle {
        OracleArg::Simulated => {
            let mut oracle = SimulatedOracle::for_classes(cfg.oracle_config()?, arch.num_classes)?;
            gradient_field(&params, &prior, &mut oracle, args.r, sigma, cfg.train.seed)?
        }
        OracleArg::Service(url) => {
            let mut e = ServiceEvaluator::new(ServiceClient::new(url)?, cfg.service.training_min_raters);
            gradient_field(&params, &prior, &mut e, args.r, sigma, cfg.train.seed)?
        }
    };
    match result {
        Ok(rows) => {
            write_gradients(&rows, arch.output_dim, args.out.as_ref())?;
            Ok(Outcome::Done)
        }
        Err(PauseReason::AwaitingRatings { batch_id, complete_fraction }) => Ok(Outcome::Pending(format!(
            "gradient batch {batch_id} is {:.0}% rated",
            complete_fraction * 100.0
        ))),
        Err(PauseReason::Unreachable { detail }) => Ok(Outcome::Unreachable(detail)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_parsing() {
        assert_eq!(parse_bounds("-3:3,-2.5:1").unwrap(), vec![(-3.0, 3.0), (-2.5, 1.0)]);
        assert!(parse_bounds("-3,3").is_err());
        assert_eq!(parse_resolution("7x5", 2).unwrap(), vec![7, 5]);
        assert_eq!(parse_resolution("4", 3).unwrap(), vec![4, 4, 4]);
        assert_eq!("class:1".parse::<FieldArg>().unwrap().0, Question::ClassAcceptability(ClassLabel(1)));
        assert!("class:x".parse::<FieldArg>().is_err());
    }
}
