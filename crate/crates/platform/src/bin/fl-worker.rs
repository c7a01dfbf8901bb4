use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use fl_worker::WorkerConfig;

/// Worker service. Settings come from flags, then environment, then the
/// config file.
#[derive(Debug, Parser)]
#[command(name = "fl-worker", version)]
struct Args {
    #[arg(long, env = "FL_WORKER_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "FL_WORKER_LISTEN")]
    listen: Option<SocketAddr>,
    /// Address the Core should dial, if different from the listen address.
    #[arg(long, env = "FL_WORKER_ADVERTISE")]
    advertise: Option<String>,
    #[arg(long, env = "FL_WORKER_METRICS_LISTEN")]
    metrics_listen: Option<SocketAddr>,
    #[arg(long, env = "FL_WORKER_CAPACITY_MB")]
    capacity_mb: Option<u32>,
    #[arg(long, env = "FL_WORKER_CACHE_THRESHOLD_BYTES")]
    cache_threshold_bytes: Option<u64>,
    #[arg(long, env = "FL_WORKER_TTL_MS")]
    ttl_ms: Option<u64>,
    #[arg(long, env = "FL_WORKER_METRICS_PERIOD_MS")]
    metrics_period_ms: Option<u64>,
    #[arg(long, env = "FL_WORKER_ANNOUNCE_PERIOD_MS")]
    announce_period_ms: Option<u64>,
    /// Core discovery endpoint for unicast announces.
    #[arg(long, env = "FL_WORKER_CORE_ADDRESS")]
    core_address: Option<String>,
    #[arg(long)]
    no_multicast: bool,
    /// Host patterns guests may reach (comma separated).
    #[arg(long, env = "FL_WORKER_HTTP_ALLOW", value_delimiter = ',')]
    http_allow: Vec<String>,
    #[arg(long, env = "FL_WORKER_PARALLELISM")]
    parallelism: Option<usize>,
    #[arg(long, env = "FL_WORKER_STATE_DIR")]
    state_dir: Option<PathBuf>,
}

fn config(args: Args) -> anyhow::Result<WorkerConfig> {
    let mut cfg: WorkerConfig = fl_platform::load_config(args.config.as_deref())?;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(listen, capacity_mb, cache_threshold_bytes, ttl_ms, metrics_period_ms, announce_period_ms, parallelism);
    if args.advertise.is_some() {
        cfg.advertise = args.advertise;
    }
    if args.metrics_listen.is_some() {
        cfg.metrics_listen = args.metrics_listen;
    }
    if args.core_address.is_some() {
        cfg.core_address = args.core_address;
    }
    if args.state_dir.is_some() {
        cfg.state_dir = args.state_dir;
    }
    if args.no_multicast {
        cfg.multicast = false;
    }
    if !args.http_allow.is_empty() {
        cfg.http_allowlist = args.http_allow;
    }
    Ok(cfg)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    fl_platform::init_logging();
    let cfg = config(Args::parse())?;
    let handle = fl_worker::launch(&cfg).await?;
    println!("worker {} listening on {}", handle.announce.worker_id, handle.listen_addr);
    if let Some(m) = handle.metrics_addr {
        println!("metrics on http://{m}/metrics");
    }
    fl_platform::shutdown_signal().await;
    handle.shutdown().await;
    Ok(())
}
