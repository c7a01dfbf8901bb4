use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use fl_core::CoreConfig;
use fl_store::StoreConfig;

/// Core service. Settings come from flags, then environment, then the
/// config file.
#[derive(Debug, Parser)]
#[command(name = "fl-core", version)]
struct Args {
    #[arg(long, env = "FL_CORE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "FL_CORE_HTTP_LISTEN")]
    http_listen: Option<SocketAddr>,
    #[arg(long, env = "FL_CORE_DISCOVERY_LISTEN")]
    discovery_listen: Option<SocketAddr>,
    /// Disable the UDP discovery listener.
    #[arg(long)]
    no_discovery: bool,
    /// Do not join the multicast group.
    #[arg(long)]
    no_multicast: bool,
    /// Worker addresses to keep connected (comma separated).
    #[arg(long, env = "FL_CORE_STATIC_WORKERS", value_delimiter = ',')]
    static_workers: Vec<String>,
    #[arg(long, env = "FL_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Directory of the file-backed function store.
    #[arg(long, env = "FL_CORE_STORE_PATH")]
    store_path: Option<PathBuf>,
    /// Keep functions in memory only.
    #[arg(long, conflicts_with = "store_path")]
    in_memory: bool,
    #[arg(long, env = "FL_CORE_LIVENESS_TIMEOUT_MS")]
    liveness_timeout_ms: Option<u64>,
    #[arg(long, env = "FL_CORE_DEFAULT_TIMEOUT_MS")]
    default_timeout_ms: Option<u64>,
    #[arg(long, env = "FL_CORE_REDIAL_PERIOD_MS")]
    redial_period_ms: Option<u64>,
}

fn config(args: Args) -> anyhow::Result<CoreConfig> {
    let mut cfg: CoreConfig = fl_platform::load_config(args.config.as_deref())?;
    if let Some(v) = args.http_listen {
        cfg.http_listen = v;
    }
    if let Some(v) = args.discovery_listen {
        cfg.discovery_listen = Some(v);
    }
    if args.no_discovery {
        cfg.discovery_listen = None;
    }
    if args.no_multicast {
        cfg.multicast = false;
    }
    if !args.static_workers.is_empty() {
        cfg.static_workers = args.static_workers;
    }
    if args.token.is_some() {
        cfg.token = args.token;
    }
    if let Some(p) = args.store_path {
        cfg.store = StoreConfig::FileBacked { root_path: p };
    }
    if args.in_memory {
        cfg.store = StoreConfig::InMemory;
    }
    if let Some(v) = args.liveness_timeout_ms {
        cfg.liveness_timeout_ms = v;
    }
    if let Some(v) = args.default_timeout_ms {
        cfg.default_timeout_ms = v;
    }
    if let Some(v) = args.redial_period_ms {
        cfg.redial_period_ms = v;
    }
    Ok(cfg)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    fl_platform::init_logging();
    let cfg = config(Args::parse())?;
    let handle = fl_core::launch(&cfg).await?;
    println!("core listening on http://{}", handle.http_addr);
    fl_platform::shutdown_signal().await;
    handle.shutdown().await;
    Ok(())
}
