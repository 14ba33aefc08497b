use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use hitl_gan::SimulatedOracle;
use hitl_gan_service::rater::{drain, RaterError};
use hitl_gan_service::server::serve as serve_http;
use hitl_gan_service::{system_clock, ClientError, ServiceClient, ServiceConfig};

use crate::{load_config, Outcome};

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, env = "HITL_GAN_LISTEN", default_value = "127.0.0.1:8787")]
    listen: SocketAddr,
    #[arg(long, env = "HITL_GAN_DATA_DIR", default_value = "eval-data")]
    data_dir: PathBuf,
    /// Seconds before an unanswered task is offered again.
    #[arg(long, env = "HITL_GAN_LEASE_TIMEOUT_SECS", default_value_t = 600)]
    lease_timeout_secs: u64,
    /// Raters per task for batches that do not set their own policy.
    #[arg(long, env = "HITL_GAN_MIN_RATERS", default_value_t = 5)]
    min_raters: usize,
}

pub fn serve(args: ServeArgs) -> anyhow::Result<Outcome> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    if args.min_raters == 0 {
        anyhow::bail!("--min-raters must be at least 1");
    }
    let config = ServiceConfig {
        listen: args.listen,
        data_dir: args.data_dir,
        lease_timeout: Duration::from_secs(args.lease_timeout_secs),
        min_raters: args.min_raters,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve_http(
        config,
        system_clock(),
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
        |addr| {
            use std::io::Write;
            println!("listening on http://{addr}");
            let _ = std::io::stdout().flush();
        },
    ))?;
    Ok(Outcome::Done)
}

#[derive(Args)]
pub struct RateArgs {
    /// Base URL of the evaluation service.
    #[arg(long)]
    service: String,
    #[arg(long, default_value = "simulated-rater")]
    rater: String,
    /// Experiment file naming the landscape to answer from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stop after this many tasks.
    #[arg(long)]
    max: Option<usize>,
}

pub fn rate(args: RateArgs) -> anyhow::Result<Outcome> {
    let cfg = load_config(args.config.as_ref())?;
    let oracle = SimulatedOracle::new(cfg.oracle_config()?)?;
    let client = ServiceClient::new(&args.service)?;
    match drain(&client, &args.rater, &oracle, args.max) {
        Ok(n) => {
            println!("{} answered {n} tasks", args.rater);
            Ok(Outcome::Done)
        }
        Err(RaterError::Client(ClientError::Unreachable(d))) => Ok(Outcome::Unreachable(d)),
        Err(e) => Err(e.into()),
    }
}

#[derive(Args)]
pub struct StatusArgs {
    #[arg(long)]
    service: String,
    batch_id: String,
}

pub fn status(args: StatusArgs) -> anyhow::Result<Outcome> {
    let client = ServiceClient::new(&args.service)?;
    match client.poll(&args.batch_id) {
        Ok(s) => {
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(Outcome::Done)
        }
        Err(ClientError::Unreachable(d)) => Ok(Outcome::Unreachable(d)),
        Err(e) => Err(e.into()),
    }
}
