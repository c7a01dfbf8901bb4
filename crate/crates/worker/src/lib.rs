//! Worker service: receives functions and invocations from the Core and runs
//! them as WebAssembly modules.

pub mod abi;
pub mod cache;
pub mod config;
pub mod engine;
pub mod host;
pub mod server;
pub mod service;

use std::sync::Arc;

use fl_protocol::SystemClock;

pub use cache::{CacheEntry, InsertOutcome, ModuleCache};
pub use config::{Identity, WorkerConfig};
pub use engine::{CompileError, RunSpec, Runtime, WasmtimeRuntime};
pub use host::Allowlist;
pub use server::{start, WorkerHandle};
pub use service::{parse_metrics_text, ServiceLimits, WorkerService};

/// Builds the default wasmtime-backed service and starts it.
pub async fn launch(cfg: &WorkerConfig) -> anyhow::Result<WorkerHandle<WasmtimeRuntime>> {
    cfg.validate().map_err(anyhow::Error::msg)?;
    let identity = Identity::load_or_create(cfg.state_dir.as_deref(), cfg.worker_id)?;
    let runtime = WasmtimeRuntime::new(Allowlist::new(&cfg.http_allowlist))?;
    let limits = ServiceLimits {
        capacity_mb: cfg.capacity_mb,
        cache_threshold_bytes: cfg.cache_threshold_bytes,
        ttl_ms: cfg.ttl_ms,
        parallelism: cfg.parallelism,
    };
    let service = Arc::new(WorkerService::new(identity.worker_id, limits, runtime, Arc::new(SystemClock)));
    start(cfg, identity, service).await
}
