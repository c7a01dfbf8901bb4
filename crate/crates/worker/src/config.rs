use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use fl_protocol::{now_ms, WorkerId, MIB};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MULTICAST_GROUP: &str = "239.77.76.83:7856";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    /// Fixed identity; otherwise loaded from `state_dir` or generated.
    pub worker_id: Option<WorkerId>,
    /// Where the Core connects.
    pub listen: SocketAddr,
    /// Address put in announces; defaults to `listen` (loopback if unspecified).
    pub advertise: Option<String>,
    /// Plaintext metrics endpoint; disabled when absent.
    pub metrics_listen: Option<SocketAddr>,
    pub capacity_mb: u32,
    pub cache_threshold_bytes: u64,
    pub ttl_ms: u64,
    pub sweep_period_ms: u64,
    pub metrics_period_ms: u64,
    pub announce_period_ms: u64,
    /// Announce cadence once a Core is connected.
    pub beacon_period_ms: u64,
    pub multicast: bool,
    pub multicast_group: SocketAddr,
    /// Discovery endpoint of a Core to announce to directly (unicast),
    /// for networks without multicast.
    pub core_address: Option<String>,
    pub http_allowlist: Vec<String>,
    /// Concurrent guest executions.
    pub parallelism: usize,
    /// Persists worker id and restart epoch.
    pub state_dir: Option<PathBuf>,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            worker_id: None,
            listen: "0.0.0.0:9100".parse().unwrap(),
            advertise: None,
            metrics_listen: None,
            capacity_mb: 1024,
            cache_threshold_bytes: 256 * MIB,
            ttl_ms: 45 * 60 * 1000,
            sweep_period_ms: 60_000,
            metrics_period_ms: 5_000,
            announce_period_ms: 3_000,
            beacon_period_ms: 30_000,
            multicast: true,
            multicast_group: DEFAULT_MULTICAST_GROUP.parse().unwrap(),
            core_address: None,
            http_allowlist: vec!["*".into()],
            parallelism: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            state_dir: None,
        }
    }
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.capacity_mb == 0 {
            return Err("capacity_mb must be positive".into());
        }
        if self.cache_threshold_bytes > u64::from(self.capacity_mb) * MIB {
            return Err(format!(
                "cache_threshold_bytes ({}) exceeds capacity ({} MiB)",
                self.cache_threshold_bytes, self.capacity_mb
            ));
        }
        if self.parallelism == 0 {
            return Err("parallelism must be positive".into());
        }
        for (name, v) in [
            ("metrics_period_ms", self.metrics_period_ms),
            ("announce_period_ms", self.announce_period_ms),
            ("beacon_period_ms", self.beacon_period_ms),
            ("sweep_period_ms", self.sweep_period_ms),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Worker id and restart epoch. The epoch grows on every boot so the Core
/// can tell a restarted worker from a stale announce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Identity {
    pub worker_id: WorkerId,
    pub epoch: u64,
}

const IDENTITY_FILE: &str = "worker-identity";

impl Identity {
    /// Loads and bumps the persisted identity, creating it on first boot.
    /// Without a state directory the id is random and the epoch is the boot
    /// time in ms.
    pub fn load_or_create(state_dir: Option<&Path>, fixed_id: Option<WorkerId>) -> io::Result<Self> {
        let Some(dir) = state_dir else {
            return Ok(Identity { worker_id: fixed_id.unwrap_or_else(WorkerId::random), epoch: now_ms() });
        };
        fs::create_dir_all(dir)?;
        let path = dir.join(IDENTITY_FILE);
        let previous = match fs::read_to_string(&path) {
            Ok(s) => parse_identity(&s),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e),
        };
        let identity = match previous {
            Some(prev) => Identity { worker_id: fixed_id.unwrap_or(prev.worker_id), epoch: prev.epoch + 1 },
            None => Identity { worker_id: fixed_id.unwrap_or_else(WorkerId::random), epoch: 1 },
        };
        let tmp = dir.join(format!("{IDENTITY_FILE}.tmp"));
        fs::write(&tmp, format!("{} {}\n", identity.worker_id, identity.epoch))?;
        fs::rename(&tmp, &path)?;
        Ok(identity)
    }
}

fn parse_identity(s: &str) -> Option<Identity> {
    let mut parts = s.split_whitespace();
    let worker_id = parts.next()?.parse().ok()?;
    let epoch = parts.next()?.parse().ok()?;
    Some(Identity { worker_id, epoch })
}
