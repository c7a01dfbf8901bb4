//! Worker-side message handling, independent of transport.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use fl_protocol::{
    Clock, CorrelationId, FunctionDescriptor, FunctionId, InvocationEnvelope, InvocationOutcome, Message,
    MetricsSample, PlatformErrorKind, WorkerId, MIB,
};
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use crate::cache::{InsertOutcome, ModuleCache};
use crate::engine::{RunSpec, Runtime};

/// Correlation ids remembered for dedupe and execution accounting.
pub const EXECUTION_LOG_CAPACITY: usize = 65_536;

/// A compiled function as held in the cache.
pub struct Compiled<M> {
    pub module: M,
    pub reserved_mb: u32,
}

type Handle<M> = Arc<Compiled<M>>;

#[derive(Debug, Default)]
pub struct Counters {
    pub invocations_total: AtomicU64,
    pub nocode_total: AtomicU64,
    pub compile_total: AtomicU64,
    pub compile_failures: AtomicU64,
    pub evictions_total: AtomicU64,
    pub duplicates_total: AtomicU64,
}

/// Bounded record of how many times each correlation id entered a guest.
#[derive(Debug, Default)]
pub struct ExecutionLog {
    counts: HashMap<CorrelationId, u32>,
    order: VecDeque<CorrelationId>,
    capacity: usize,
}

impl ExecutionLog {
    pub fn new(capacity: usize) -> Self {
        ExecutionLog { counts: HashMap::new(), order: VecDeque::new(), capacity }
    }

    /// Claims `cid` for execution. False if it was already claimed.
    pub fn claim(&mut self, cid: CorrelationId) -> bool {
        if self.counts.contains_key(&cid) {
            return false;
        }
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.counts.remove(&old);
            }
        }
        self.counts.insert(cid, 0);
        self.order.push_back(cid);
        true
    }

    pub fn record_start(&mut self, cid: CorrelationId) {
        if let Some(n) = self.counts.get_mut(&cid) {
            *n += 1;
        }
    }

    pub fn count(&self, cid: &CorrelationId) -> Option<u32> {
        self.counts.get(cid).copied()
    }

    pub fn snapshot(&self) -> HashMap<CorrelationId, u32> {
        self.counts.clone()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ServiceLimits {
    pub capacity_mb: u32,
    pub cache_threshold_bytes: u64,
    pub ttl_ms: u64,
    pub parallelism: usize,
}

pub struct WorkerService<R: Runtime> {
    worker_id: WorkerId,
    limits: ServiceLimits,
    runtime: R,
    clock: Arc<dyn Clock>,
    cache: Mutex<ModuleCache<Handle<R::Module>>>,
    executions: Mutex<ExecutionLog>,
    permits: Semaphore,
    reserved_in_flight_mb: AtomicU64,
    in_flight: AtomicU64,
    last_sample_at: AtomicU64,
    pub counters: Counters,
}

impl<R: Runtime> WorkerService<R> {
    pub fn new(worker_id: WorkerId, limits: ServiceLimits, runtime: R, clock: Arc<dyn Clock>) -> Self {
        WorkerService {
            worker_id,
            limits,
            runtime,
            clock,
            cache: Mutex::new(ModuleCache::new(limits.cache_threshold_bytes, limits.ttl_ms)),
            executions: Mutex::new(ExecutionLog::new(EXECUTION_LOG_CAPACITY)),
            permits: Semaphore::new(limits.parallelism.max(1)),
            reserved_in_flight_mb: AtomicU64::new(0),
            in_flight: AtomicU64::new(0),
            last_sample_at: AtomicU64::new(0),
            counters: Counters::default(),
        }
    }

    pub fn worker_id(&self) -> WorkerId {
        self.worker_id
    }

    pub fn limits(&self) -> ServiceLimits {
        self.limits
    }

    /// Compiles a descriptor and caches it. Blocking. `compile_total` is
    /// bumped once the outcome is in the cache.
    fn compile_and_cache(&self, d: &FunctionDescriptor) -> Option<Handle<R::Module>> {
        let compiled = self.runtime.compile(&d.wasm);
        let _done = CountOnDrop(&self.counters.compile_total);
        let (module, size) = match compiled {
            Ok(v) => v,
            Err(e) => {
                self.counters.compile_failures.fetch_add(1, Ordering::Relaxed);
                warn!(function = %d.id, error = %e, "compile failed");
                self.cache.lock().unwrap().remove(&d.id);
                return None;
            }
        };
        let handle = Arc::new(Compiled { module, reserved_mb: d.reserved_memory_mb });
        let now = self.clock.now_ms();
        let mut cache = self.cache.lock().unwrap();
        match cache.insert(d.id.clone(), handle.clone(), size, now) {
            InsertOutcome::Admitted { evicted } => {
                self.counters.evictions_total.fetch_add(evicted.len() as u64, Ordering::Relaxed);
                for id in &evicted {
                    debug!(function = %id, "evicted");
                }
            }
            InsertOutcome::Rejected => {
                debug!(function = %d.id, size, "module larger than cache threshold, not cached");
            }
        }
        Some(handle)
    }

    pub fn handle_create_broadcast(&self, d: &FunctionDescriptor) {
        self.compile_and_cache(d);
    }

    /// Replaces a cached version. A failed compile leaves no stale entry.
    pub fn handle_update_broadcast(&self, d: &FunctionDescriptor) {
        self.compile_and_cache(d);
    }

    pub fn handle_delete_broadcast(&self, id: &FunctionId) {
        self.cache.lock().unwrap().remove(id);
    }

    /// Handles an InvokeRequest. Returns `NoCode` on a cache miss, `None`
    /// for a correlation id that was already executed here.
    pub async fn handle_invoke(self: &Arc<Self>, env: InvocationEnvelope) -> Option<Message> {
        let now = self.clock.now_ms();
        let hit = self.cache.lock().unwrap().get(&env.function_id, now);
        let Some(handle) = hit else {
            self.counters.nocode_total.fetch_add(1, Ordering::Relaxed);
            return Some(Message::NoCode { correlation_id: env.correlation_id, function_id: env.function_id });
        };
        self.execute(env, handle).await
    }

    /// Handles InvokeWithCode: compiles (unless an identical version is
    /// cached), caches, then executes.
    pub async fn handle_invoke_with_code(
        self: &Arc<Self>,
        env: InvocationEnvelope,
        descriptor: FunctionDescriptor,
    ) -> Option<Message> {
        let this = self.clone();
        let handle = tokio::task::spawn_blocking(move || this.compile_and_cache(&descriptor)).await.ok().flatten();
        let Some(handle) = handle else {
            if !self.executions.lock().unwrap().claim(env.correlation_id) {
                return None;
            }
            return Some(Message::InvokeResult {
                correlation_id: env.correlation_id,
                outcome: InvocationOutcome::platform(PlatformErrorKind::InvalidWasm, "module failed to compile"),
            });
        };
        self.execute(env, handle).await
    }

    async fn execute(self: &Arc<Self>, env: InvocationEnvelope, handle: Handle<R::Module>) -> Option<Message> {
        let cid = env.correlation_id;
        if !self.executions.lock().unwrap().claim(cid) {
            self.counters.duplicates_total.fetch_add(1, Ordering::Relaxed);
            warn!(correlation_id = %cid, "duplicate invocation ignored");
            return None;
        }
        let reserved = u64::from(handle.reserved_mb);
        self.reserved_in_flight_mb.fetch_add(reserved, Ordering::Relaxed);
        self.in_flight.fetch_add(1, Ordering::Relaxed);
        let outcome = match self.permits.acquire().await {
            Ok(_permit) => {
                let this = self.clone();
                let args = env.args;
                let deadline_ms = env.deadline;
                let joined = tokio::task::spawn_blocking(move || {
                    let spec = RunSpec { args: &args, reserved_mb: handle.reserved_mb, deadline_ms };
                    let mut on_start = || {
                        this.counters.invocations_total.fetch_add(1, Ordering::Relaxed);
                        this.executions.lock().unwrap().record_start(cid);
                    };
                    this.runtime.run(&handle.module, spec, &mut on_start)
                })
                .await;
                joined.unwrap_or_else(|e| InvocationOutcome::platform(PlatformErrorKind::GuestTrap, format!("executor failed: {e}")))
            }
            Err(_) => InvocationOutcome::platform(PlatformErrorKind::WorkerLost, "worker shutting down"),
        };
        self.in_flight.fetch_sub(1, Ordering::Relaxed);
        self.reserved_in_flight_mb.fetch_sub(reserved, Ordering::Relaxed);
        Some(Message::InvokeResult { correlation_id: cid, outcome })
    }

    /// Current load. `taken_at` is strictly increasing.
    pub fn sample(&self) -> MetricsSample {
        let cache_mb = self.cache_bytes() / MIB;
        let used = self.reserved_in_flight_mb.load(Ordering::Relaxed) + cache_mb;
        let now = self.clock.now_ms();
        let mut prev = self.last_sample_at.load(Ordering::Relaxed);
        let taken_at = loop {
            let next = now.max(prev + 1);
            match self.last_sample_at.compare_exchange(prev, next, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => break next,
                Err(p) => prev = p,
            }
        };
        MetricsSample {
            worker_id: self.worker_id,
            free_memory_mb: u64::from(self.limits.capacity_mb).saturating_sub(used),
            in_flight: self.in_flight.load(Ordering::Relaxed),
            cache_bytes: self.cache_bytes(),
            taken_at,
        }
    }

    pub fn ttl_sweep(&self) -> Vec<FunctionId> {
        let now = self.clock.now_ms();
        let evicted = self.cache.lock().unwrap().ttl_sweep(now);
        self.counters.evictions_total.fetch_add(evicted.len() as u64, Ordering::Relaxed);
        evicted
    }

    pub fn cache_bytes(&self) -> u64 {
        self.cache.lock().unwrap().total_bytes()
    }

    pub fn cached_ids(&self) -> Vec<FunctionId> {
        let mut ids: Vec<_> = self.cache.lock().unwrap().ids().cloned().collect();
        ids.sort();
        ids
    }

    pub fn is_cached(&self, id: &FunctionId) -> bool {
        self.cache.lock().unwrap().contains(id)
    }

    pub fn flush_cache(&self) {
        let mut cache = self.cache.lock().unwrap();
        *cache = ModuleCache::new(self.limits.cache_threshold_bytes, self.limits.ttl_ms);
    }

    pub fn execution_count(&self, cid: &CorrelationId) -> Option<u32> {
        self.executions.lock().unwrap().count(cid)
    }

    pub fn executions(&self) -> HashMap<CorrelationId, u32> {
        self.executions.lock().unwrap().snapshot()
    }

    /// Plaintext metrics, one `name value` pair per line.
    pub fn metrics_text(&self) -> String {
        let c = &self.counters;
        let s = self.sample();
        let cache_entries = self.cache.lock().unwrap().len();
        let rows: [(&str, u64); 10] = [
            ("invocations_total", c.invocations_total.load(Ordering::Relaxed)),
            ("nocode_total", c.nocode_total.load(Ordering::Relaxed)),
            ("compile_total", c.compile_total.load(Ordering::Relaxed)),
            ("compile_failures_total", c.compile_failures.load(Ordering::Relaxed)),
            ("evictions_total", c.evictions_total.load(Ordering::Relaxed)),
            ("duplicates_total", c.duplicates_total.load(Ordering::Relaxed)),
            ("cache_bytes", s.cache_bytes),
            ("cache_entries", cache_entries as u64),
            ("in_flight", s.in_flight),
            ("free_memory_mb", s.free_memory_mb),
        ];
        let mut out = format!("worker_id {}\n", self.worker_id);
        for (k, v) in rows {
            out.push_str(&format!("{k} {v}\n"));
        }
        out
    }
}

/// Parses the output of [`WorkerService::metrics_text`].
pub fn parse_metrics_text(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(' '))
        .map(|(k, v)| (k.to_string(), v.trim().to_string()))
        .collect()
}

struct CountOnDrop<'a>(&'a AtomicU64);

impl Drop for CountOnDrop<'_> {
    fn drop(&mut self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn execution_log_claims_once() {
        let mut log = ExecutionLog::new(4);
        let a = CorrelationId::random();
        assert!(log.claim(a));
        assert!(!log.claim(a));
        log.record_start(a);
        assert_eq!(log.count(&a), Some(1));
    }

    #[test]
    fn execution_log_is_bounded() {
        let mut log = ExecutionLog::new(3);
        let ids: Vec<_> = (0..5).map(|_| CorrelationId::random()).collect();
        for id in &ids {
            log.claim(*id);
        }
        assert_eq!(log.snapshot().len(), 3);
        assert_eq!(log.count(&ids[0]), None);
        assert_eq!(log.count(&ids[4]), Some(0));
    }

    #[test]
    fn metrics_text_round_trips() {
        let m = parse_metrics_text("a 1\nb 22\n");
        assert_eq!(m["b"], "22");
    }
}
