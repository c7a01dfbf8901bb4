//! The Core: REST API, function lifecycle, worker registry, scheduling and
//! invocation brokering.

pub mod abi_check;
pub mod api;
pub mod config;
pub mod controller;
pub mod net;
pub mod registry;
pub mod scheduler;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use fl_protocol::SystemClock;
use tokio::net::TcpListener;
use tokio::task::JoinSet;
use tracing::{info, warn};

pub use config::CoreConfig;
pub use controller::{Core, CoreError, Invocation};
pub use registry::{Registry, WorkerRecord, WorkerSnapshot};
pub use scheduler::{select_worker, Candidate};

/// A running Core. Dropping the handle stops it.
pub struct CoreHandle {
    pub core: Arc<Core>,
    pub http_addr: SocketAddr,
    pub discovery_addr: Option<SocketAddr>,
    tasks: JoinSet<()>,
}

impl CoreHandle {
    pub async fn shutdown(mut self) {
        self.tasks.shutdown().await;
    }
}

impl Drop for CoreHandle {
    fn drop(&mut self) {
        self.tasks.abort_all();
    }
}

/// Opens the store, binds listeners and spawns all Core tasks.
pub async fn launch(cfg: &CoreConfig) -> anyhow::Result<CoreHandle> {
    cfg.validate().map_err(anyhow::Error::msg)?;
    if cfg.token.is_none() {
        warn!("no token configured; the API is unauthenticated");
    }
    let store = fl_store::open(&cfg.store).context("opening function store")?;
    let core = Arc::new(Core::new(
        store,
        Arc::new(SystemClock),
        cfg.liveness_timeout_ms,
        Duration::from_millis(cfg.default_timeout_ms),
    ));
    let connect_timeout = Duration::from_millis(cfg.connect_timeout_ms);
    let mut tasks = JoinSet::new();

    let listener = TcpListener::bind(cfg.http_listen).await.with_context(|| format!("binding {}", cfg.http_listen))?;
    let http_addr = listener.local_addr()?;
    let app = api::router(api::ApiState {
        core: core.clone(),
        token: cfg.token.as_deref().map(Arc::from),
        default_memory_mb: cfg.default_memory_mb,
        connect_timeout,
    });
    tasks.spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            warn!(error = %e, "http server stopped");
        }
    });

    let discovery_addr = match cfg.discovery_listen {
        Some(addr) => {
            let group = cfg.multicast.then_some(cfg.multicast_group);
            let socket = net::bind_discovery(addr, group).await.with_context(|| format!("binding discovery {addr}"))?;
            let bound = socket.local_addr()?;
            tasks.spawn(net::discovery_loop(core.clone(), socket, connect_timeout));
            Some(bound)
        }
        None => None,
    };

    if !cfg.static_workers.is_empty() {
        tasks.spawn(net::static_workers_loop(
            core.clone(),
            cfg.static_workers.clone(),
            Duration::from_millis(cfg.redial_period_ms),
            connect_timeout,
        ));
    }
    info!(%http_addr, ?discovery_addr, "core ready");
    Ok(CoreHandle { core, http_addr, discovery_addr, tasks })
}
