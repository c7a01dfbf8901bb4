use std::net::SocketAddr;
use std::path::PathBuf;

use fl_store::StoreConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MULTICAST_GROUP: &str = "239.77.76.83:7856";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreConfig {
    /// REST API bind address.
    pub http_listen: SocketAddr,
    /// UDP bind address for worker announces; discovery is off when absent.
    pub discovery_listen: Option<SocketAddr>,
    /// Join the multicast group on the discovery socket.
    pub multicast: bool,
    pub multicast_group: SocketAddr,
    /// Workers dialed at boot and re-dialed while disconnected.
    pub static_workers: Vec<String>,
    pub redial_period_ms: u64,
    pub connect_timeout_ms: u64,
    /// Shared bearer token. Authentication is disabled when absent.
    pub token: Option<String>,
    pub metrics_period_ms: u64,
    pub liveness_timeout_ms: u64,
    /// Invocation deadline unless overridden per request.
    pub default_timeout_ms: u64,
    pub default_memory_mb: u32,
    pub store: StoreConfig,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            http_listen: "0.0.0.0:8080".parse().unwrap(),
            discovery_listen: Some("0.0.0.0:7856".parse().unwrap()),
            multicast: true,
            multicast_group: DEFAULT_MULTICAST_GROUP.parse().unwrap(),
            static_workers: Vec::new(),
            redial_period_ms: 3_000,
            connect_timeout_ms: 2_000,
            token: None,
            metrics_period_ms: 5_000,
            liveness_timeout_ms: 15_000,
            default_timeout_ms: 60_000,
            default_memory_mb: 128,
            store: StoreConfig::FileBacked { root_path: PathBuf::from("fl-data") },
        }
    }
}

impl CoreConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.liveness_timeout_ms < self.metrics_period_ms {
            return Err("liveness_timeout_ms must be at least metrics_period_ms".into());
        }
        if self.default_timeout_ms == 0 || self.redial_period_ms == 0 || self.connect_timeout_ms == 0 {
            return Err("timeouts and periods must be positive".into());
        }
        if self.default_memory_mb == 0 {
            return Err("default_memory_mb must be positive".into());
        }
        if matches!(&self.token, Some(t) if t.is_empty()) {
            return Err("token must not be empty".into());
        }
        Ok(())
    }
}
