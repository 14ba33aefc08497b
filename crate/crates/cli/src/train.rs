use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Args;
use hitl_gan::eval::{AbsoluteEvaluator, PairedEvaluator};
use hitl_gan::rundir::{Checkpoint, PauseReason, RunDir};
use hitl_gan::trainer::{self, initialize_until_valid, open_prior, training_prior, Prior, RunOutcome};
use hitl_gan::{GeneratorParams, Question, ResponseMode, SimulatedOracle};
use hitl_gan_service::{ServiceClient, ServiceEvaluator, WaitPolicy};

use crate::{csv_writer, OracleArg, Outcome};

#[derive(Args)]
pub struct TrainArgs {
    /// Experiment file (TOML, or JSON when the name ends in `.json`).
    #[arg(long)]
    config: PathBuf,
    /// `simulated` or the base URL of an evaluation service.
    #[arg(long, default_value = "simulated")]
    oracle: OracleArg,
    /// Run directory; an existing run there is resumed.
    #[arg(long)]
    out: PathBuf,
    /// Start from this checkpoint instead of rejection-sampled initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Keep polling the service until each batch is rated instead of exiting.
    #[arg(long)]
    wait: bool,
    /// Give up waiting after this many seconds.
    #[arg(long, requires = "wait")]
    wait_timeout_secs: Option<u64>,
}

fn write_data(path: &Path, params: &GeneratorParams, prior: &Prior) -> anyhow::Result<()> {
    let data = prior.generate(params)?;
    let mut w = csv_writer(Some(&path.to_path_buf()))?;
    let dim = params.arch().output_dim;
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    header.push("class".into());
    w.write_record(&header)?;
    for (x, c) in data.iter().zip(&prior.labels) {
        let mut rec: Vec<String> = x.iter().map(f64::to_string).collect();
        rec.push(c.index().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn mean_posteriors(oracle: &SimulatedOracle, params: &GeneratorParams, prior: &Prior) -> anyhow::Result<(f64, f64)> {
    let data = prior.generate(params)?;
    let (mut nat, mut cls) = (0.0, 0.0);
    for (x, &c) in data.iter().zip(&prior.labels) {
        nat += oracle.posterior(x, Question::Naturalness)?;
        cls += oracle.posterior(x, Question::ClassAcceptability(c))?;
    }
    let n = data.len().max(1) as f64;
    Ok((nat / n, cls / n))
}

pub fn run(args: TrainArgs) -> anyhow::Result<Outcome> {
    let cfg = crate::load_config(Some(&args.config))?;
    let arch = cfg.arch.clone();
    arch.validate()?;
    cfg.train.validate(arch.num_classes)?;
    let mut sim = SimulatedOracle::for_classes(cfg.oracle_config()?, arch.num_classes)?;
    let dir = RunDir::create(&args.out)?;

    let initial = match dir.latest_checkpoint()? {
        Some(ck) => {
            eprintln!("resuming {} from iteration {}", args.out.display(), ck.iteration);
            ck.params()?
        }
        None => match &args.init {
            Some(path) => {
                let params = Checkpoint::load(path)?.params()?;
                if params.arch() != &arch {
                    bail!("{}: architecture differs from the experiment's", path.display());
                }
                params
            }
            None => {
                let prior = training_prior(&cfg.train, &arch, 0)?;
                let (params, report) =
                    initialize_until_valid(&arch, &cfg.init, &sim, &prior, cfg.train.seed, cfg.init_scale)?;
                eprintln!("initialized after {} attempts: {report}", report.attempts);
                params
            }
        },
    };

    // Objectives are reported from the noise-free continuous landscape so that
    // small per-step changes are not rounded away.
    let monitor_oracle =
        SimulatedOracle::for_classes(cfg.oracle_config()?.with_mode(ResponseMode::Continuous), arch.num_classes)?;
    let (mut service_eval, monitor): (Option<ServiceEvaluator>, Option<&dyn AbsoluteEvaluator>) = match &args.oracle
    {
        OracleArg::Simulated => (None, Some(&monitor_oracle)),
        OracleArg::Service(url) => {
            let mut e = ServiceEvaluator::new(ServiceClient::new(url)?, cfg.service.training_min_raters);
            if args.wait {
                e = e.with_wait(WaitPolicy {
                    interval: Duration::from_millis(cfg.service.poll_interval_ms),
                    timeout: args.wait_timeout_secs.map(Duration::from_secs),
                });
            }
            (Some(e), None)
        }
    };
    let evaluator: &mut dyn PairedEvaluator = match service_eval.as_mut() {
        Some(e) => e,
        None => &mut sim,
    };

    let outcome = trainer::run(&cfg.train, &initial, evaluator, monitor, &args.out)?;
    for r in &outcome.history().records {
        let obj = match (r.objectives_before, r.objectives_after) {
            (Some(b), Some(a)) => format!(
                "  L_S {:.3} -> {:.3}  L_C {:.3} -> {:.3}",
                b.l_s, a.l_s, b.l_c, a.l_c
            ),
            _ => String::new(),
        };
        println!("iteration {}: {} queries, |grad theta| {:.4e}{obj}", r.iteration, r.queries, r.theta_grad_norm);
    }
    match outcome {
        RunOutcome::Paused { reason: PauseReason::AwaitingRatings { batch_id, complete_fraction }, iteration, .. } => {
            Ok(Outcome::Pending(format!(
                "step {} batch {batch_id} is {:.0}% rated; rerun the same command to continue",
                iteration + 1,
                complete_fraction * 100.0
            )))
        }
        RunOutcome::Paused { reason: PauseReason::Unreachable { detail }, .. } => Ok(Outcome::Unreachable(detail)),
        RunOutcome::Completed { params, .. } => {
            let first = Checkpoint::load(&dir.checkpoint_path(0)).context("reading initial checkpoint")?.params()?;
            let closed = training_prior(&cfg.train, &arch, 0)?;
            write_data(&args.out.join("before.csv"), &first, &closed)?;
            write_data(&args.out.join("after.csv"), &params, &closed)?;
            if args.oracle == OracleArg::Simulated {
                let open = open_prior(&cfg.train, &arch)?;
                for (name, prior) in [("closed", &closed), ("open", &open)] {
                    let (n0, c0) = mean_posteriors(&monitor_oracle, &first, prior)?;
                    let (n1, c1) = mean_posteriors(&monitor_oracle, &params, prior)?;
                    println!(
                        "{name} noise: naturalness {n0:.4} -> {n1:.4}, class acceptability {c0:.4} -> {c1:.4}"
                    );
                }
            }
            Ok(Outcome::Done)
        }
    }
}
