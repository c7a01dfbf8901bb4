//! Function lifecycle and invocation orchestration.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use fl_protocol::{
    now_ms, Clock, CorrelationId, DiscoveryAnnounce, FunctionDescriptor, FunctionId, InvocationEnvelope,
    InvocationOutcome, Message, PlatformErrorKind, WorkerId, MIB,
};
use fl_store::{FunctionStore, StoreError};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot};
use tokio::task::AbortHandle;
use tracing::{debug, info, warn};

use crate::abi_check::check_guest;
use crate::registry::{Registry, WorkerSnapshot};

pub const MAX_ARGS_BYTES: usize = 8 * MIB as usize;

/// Extra time the Core waits past the deadline so that a worker-side
/// timeout, which carries more detail, can arrive first.
const DEADLINE_GRACE: Duration = Duration::from_millis(250);

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("function {0} already exists")]
    AlreadyExists(FunctionId),
    #[error("function {0} not found")]
    NotFound(FunctionId),
    #[error("invalid wasm: {0}")]
    InvalidWasm(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("storage unavailable: {0}")]
    StorageUnavailable(String),
    #[error("cannot connect to worker: {0}")]
    Connect(String),
}

impl From<StoreError> for CoreError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => CoreError::NotFound(id),
            StoreError::InvalidDescriptor(m) => CoreError::InvalidWasm(m),
            StoreError::StorageUnavailable(m) => CoreError::StorageUnavailable(m),
        }
    }
}

/// Result of one invoke call.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub correlation_id: CorrelationId,
    pub worker_id: Option<WorkerId>,
    pub outcome: InvocationOutcome,
}

#[derive(Debug, Default)]
pub struct CoreCounters {
    pub invocations_total: AtomicU64,
    pub nocode_total: AtomicU64,
    pub worker_lost_total: AtomicU64,
}

struct Link {
    conn: u64,
    address: String,
    tx: mpsc::UnboundedSender<Message>,
    reader: Option<AbortHandle>,
}

struct Call {
    worker_id: WorkerId,
    conn: u64,
    envelope: InvocationEnvelope,
    reply: Option<oneshot::Sender<InvocationOutcome>>,
    code_sent: bool,
}

struct State {
    registry: Registry,
    links: HashMap<WorkerId, Link>,
    calls: HashMap<CorrelationId, Call>,
}

pub struct Core {
    store: Arc<dyn FunctionStore>,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
    lifecycle: tokio::sync::Mutex<()>,
    next_conn: AtomicU64,
    default_timeout: Duration,
    pub counters: CoreCounters,
}

impl Core {
    pub fn new(
        store: Arc<dyn FunctionStore>,
        clock: Arc<dyn Clock>,
        liveness_timeout_ms: u64,
        default_timeout: Duration,
    ) -> Self {
        Core {
            store,
            clock,
            state: Mutex::new(State {
                registry: Registry::new(liveness_timeout_ms),
                links: HashMap::new(),
                calls: HashMap::new(),
            }),
            lifecycle: tokio::sync::Mutex::new(()),
            next_conn: AtomicU64::new(1),
            default_timeout,
            counters: CoreCounters::default(),
        }
    }

    pub fn store(&self) -> &Arc<dyn FunctionStore> {
        &self.store
    }

    async fn blocking<T: Send + 'static>(
        &self,
        f: impl FnOnce(Arc<dyn FunctionStore>) -> Result<T, StoreError> + Send + 'static,
    ) -> Result<T, CoreError> {
        let store = self.store.clone();
        tokio::task::spawn_blocking(move || f(store))
            .await
            .map_err(|e| CoreError::StorageUnavailable(e.to_string()))?
            .map_err(CoreError::from)
    }

    // ---- lifecycle ----

    pub async fn create_function(
        &self,
        id: FunctionId,
        wasm: Vec<u8>,
        reserved_memory_mb: u32,
    ) -> Result<FunctionDescriptor, CoreError> {
        check_guest(&wasm).map_err(CoreError::InvalidWasm)?;
        let d = FunctionDescriptor::new(id.clone(), wasm, reserved_memory_mb, now_ms())
            .map_err(|e| CoreError::InvalidWasm(e.to_string()))?;
        let _guard = self.lifecycle.lock().await;
        let probe = id.clone();
        match self.blocking(move |s| s.get(&probe)).await {
            Ok(_) => return Err(CoreError::AlreadyExists(id)),
            Err(CoreError::NotFound(_)) => {}
            Err(e) => return Err(e),
        }
        let stored = d.clone();
        self.blocking(move |s| s.put(stored)).await?;
        let n = self.broadcast(|| Message::CreateBroadcast { descriptor: d.clone() });
        info!(function = %id, workers = n, "function created");
        Ok(d)
    }

    pub async fn update_function(
        &self,
        id: FunctionId,
        wasm: Vec<u8>,
        reserved_memory_mb: u32,
    ) -> Result<FunctionDescriptor, CoreError> {
        check_guest(&wasm).map_err(CoreError::InvalidWasm)?;
        let _guard = self.lifecycle.lock().await;
        let probe = id.clone();
        let old = self.blocking(move |s| s.get(&probe)).await?;
        let mut d = FunctionDescriptor::new(id.clone(), wasm, reserved_memory_mb, now_ms())
            .map_err(|e| CoreError::InvalidWasm(e.to_string()))?;
        d.created_at = old.created_at;
        d.updated_at = d.updated_at.max(old.updated_at + 1);
        let stored = d.clone();
        self.blocking(move |s| s.put(stored)).await?;
        let n = self.broadcast(|| Message::UpdateBroadcast { descriptor: d.clone() });
        info!(function = %id, workers = n, "function updated");
        Ok(d)
    }

    pub async fn delete_function(&self, id: FunctionId) -> Result<(), CoreError> {
        let _guard = self.lifecycle.lock().await;
        let target = id.clone();
        self.blocking(move |s| s.delete(&target)).await?;
        let n = self.broadcast(|| Message::DeleteBroadcast { function_id: id.clone() });
        info!(function = %id, workers = n, "function deleted");
        Ok(())
    }

    pub async fn get_function(&self, id: FunctionId) -> Result<FunctionDescriptor, CoreError> {
        self.blocking(move |s| s.get(&id)).await
    }

    pub async fn list_functions(&self) -> Result<Vec<FunctionId>, CoreError> {
        self.blocking(|s| s.list()).await
    }

    /// Sends a message to every connected worker; returns how many accepted it.
    fn broadcast(&self, make: impl Fn() -> Message) -> usize {
        let state = self.state.lock().unwrap();
        state.links.values().filter(|l| l.tx.send(make()).is_ok()).count()
    }

    // ---- invocation ----

    /// Runs one invocation. Never retried on another worker. Errors are
    /// for requests that could not be attempted at all; everything else is
    /// reported in the outcome.
    pub async fn invoke(
        &self,
        id: FunctionId,
        args: String,
        timeout: Option<Duration>,
    ) -> Result<Invocation, CoreError> {
        validate_args(&args)?;
        let correlation_id = CorrelationId::random();
        self.counters.invocations_total.fetch_add(1, Ordering::Relaxed);
        let done = |worker_id, outcome| Ok(Invocation { correlation_id, worker_id, outcome });

        let fid = id.clone();
        let descriptor = match self.blocking(move |s| s.get(&fid)).await {
            Ok(d) => d,
            Err(CoreError::NotFound(_)) => {
                return done(None, InvocationOutcome::platform(PlatformErrorKind::NotFound, format!("function {id} not found")))
            }
            Err(e) => return Err(e),
        };

        let timeout = timeout.unwrap_or(self.default_timeout);
        let envelope = InvocationEnvelope {
            correlation_id,
            function_id: id.clone(),
            args,
            deadline: now_ms() + timeout.as_millis() as u64,
        };
        let (reply_tx, reply_rx) = oneshot::channel();
        let worker_id = {
            let mut state = self.state.lock().unwrap();
            let now = self.clock.now_ms();
            let Some(worker_id) =
                state.registry.reserve(correlation_id, u64::from(descriptor.reserved_memory_mb), now)
            else {
                return done(
                    None,
                    InvocationOutcome::platform(
                        PlatformErrorKind::NoWorkerAvailable,
                        format!("no worker has {} MiB free", descriptor.reserved_memory_mb),
                    ),
                );
            };
            let link = state.links.get(&worker_id).expect("registered workers have a link");
            let conn = link.conn;
            let sent = link.tx.send(Message::InvokeRequest { envelope: envelope.clone() }).is_ok();
            if !sent {
                state.registry.release(&worker_id, &correlation_id);
                return done(Some(worker_id), InvocationOutcome::platform(PlatformErrorKind::WorkerLost, "connection closed"));
            }
            state.calls.insert(
                correlation_id,
                Call { worker_id, conn, envelope, reply: Some(reply_tx), code_sent: false },
            );
            worker_id
        };
        debug!(%correlation_id, function = %id, worker = %worker_id, "dispatched");

        let outcome = match tokio::time::timeout(timeout + DEADLINE_GRACE, reply_rx).await {
            Ok(Ok(outcome)) => outcome,
            Ok(Err(_)) => InvocationOutcome::platform(PlatformErrorKind::WorkerLost, "worker disconnected"),
            Err(_) => InvocationOutcome::platform(
                PlatformErrorKind::Timeout,
                format!("no result within {} ms", timeout.as_millis()),
            ),
        };
        {
            let mut state = self.state.lock().unwrap();
            state.calls.remove(&correlation_id);
            state.registry.release(&worker_id, &correlation_id);
        }
        if outcome.platform_kind() == Some(PlatformErrorKind::WorkerLost) {
            self.counters.worker_lost_total.fetch_add(1, Ordering::Relaxed);
        }
        done(Some(worker_id), outcome)
    }

    // ---- worker connections ----

    pub(crate) fn next_conn_id(&self) -> u64 {
        self.next_conn.fetch_add(1, Ordering::Relaxed)
    }

    /// Registers a freshly handshaken connection, superseding any previous
    /// connection of the same worker.
    pub(crate) fn attach(
        &self,
        announce: &DiscoveryAnnounce,
        address: String,
        conn: u64,
        tx: mpsc::UnboundedSender<Message>,
    ) {
        let mut state = self.state.lock().unwrap();
        let now = self.clock.now_ms();
        if let Some(old) = state.links.remove(&announce.worker_id) {
            if let Some(r) = old.reader {
                r.abort();
            }
            Self::fail_calls(&mut state, &announce.worker_id, old.conn);
        }
        state.registry.upsert(announce, address.clone(), now);
        state.links.insert(announce.worker_id, Link { conn, address, tx, reader: None });
        info!(worker = %announce.worker_id, epoch = announce.epoch, conn, "worker attached");
    }

    pub(crate) fn set_reader(&self, worker: &WorkerId, conn: u64, reader: AbortHandle) {
        let mut state = self.state.lock().unwrap();
        match state.links.get_mut(worker) {
            Some(link) if link.conn == conn => link.reader = Some(reader),
            _ => reader.abort(),
        }
    }

    pub(crate) fn detach(&self, worker: &WorkerId, conn: u64) {
        let mut state = self.state.lock().unwrap();
        if state.links.get(worker).is_some_and(|l| l.conn == conn) {
            state.links.remove(worker);
            state.registry.remove(worker);
            info!(%worker, conn, "worker detached");
        }
        Self::fail_calls(&mut state, worker, conn);
    }

    fn fail_calls(state: &mut State, worker: &WorkerId, conn: u64) {
        for call in state.calls.values_mut() {
            if call.worker_id == *worker && call.conn == conn {
                if let Some(reply) = call.reply.take() {
                    let _ = reply.send(InvocationOutcome::platform(
                        PlatformErrorKind::WorkerLost,
                        "worker disconnected before replying",
                    ));
                }
            }
        }
    }

    /// Handles one frame received from a worker connection.
    pub(crate) fn on_message(self: &Arc<Self>, worker: WorkerId, conn: u64, msg: Message) {
        let mut state = self.state.lock().unwrap();
        if !state.links.get(&worker).is_some_and(|l| l.conn == conn) {
            return;
        }
        let now = self.clock.now_ms();
        state.registry.touch(&worker, now);
        match msg {
            Message::Heartbeat { sample } => {
                if sample.worker_id != worker {
                    warn!(%worker, reported = %sample.worker_id, "heartbeat for another worker ignored");
                    return;
                }
                state.registry.ingest_heartbeat(sample, now);
            }
            Message::InvokeResult { correlation_id, outcome } => match state.calls.get_mut(&correlation_id) {
                Some(call) if call.worker_id == worker && call.conn == conn => {
                    if let Some(reply) = call.reply.take() {
                        let _ = reply.send(outcome);
                    }
                }
                _ => debug!(%correlation_id, %worker, "result for unknown or expired invocation"),
            },
            Message::NoCode { correlation_id, function_id } => {
                let Some(call) = state.calls.get_mut(&correlation_id) else {
                    debug!(%correlation_id, "no-code for unknown invocation");
                    return;
                };
                if call.worker_id != worker || call.conn != conn || call.code_sent || call.envelope.function_id != function_id {
                    warn!(%correlation_id, %worker, "unexpected no-code ignored");
                    return;
                }
                call.code_sent = true;
                self.counters.nocode_total.fetch_add(1, Ordering::Relaxed);
                let envelope = call.envelope.clone();
                drop(state);
                let core = self.clone();
                tokio::spawn(async move { core.send_with_code(worker, conn, envelope).await });
            }
            other => warn!(%worker, tag = ?other.tag(), "unexpected message from worker"),
        }
    }

    async fn send_with_code(&self, worker: WorkerId, conn: u64, envelope: InvocationEnvelope) {
        let id = envelope.function_id.clone();
        let cid = envelope.correlation_id;
        let descriptor = match self.blocking(move |s| s.get(&id)).await {
            Ok(d) => d,
            Err(e) => {
                let mut state = self.state.lock().unwrap();
                if let Some(reply) = state.calls.get_mut(&cid).and_then(|c| c.reply.take()) {
                    let _ = reply.send(InvocationOutcome::platform(PlatformErrorKind::NotFound, e.to_string()));
                }
                return;
            }
        };
        let state = self.state.lock().unwrap();
        if let Some(link) = state.links.get(&worker).filter(|l| l.conn == conn) {
            let _ = link.tx.send(Message::InvokeWithCode { envelope, descriptor });
        }
    }

    // ---- introspection ----

    pub fn counters_snapshot(&self) -> HashMap<&'static str, u64> {
        let c = &self.counters;
        HashMap::from([
            ("invocations_total", c.invocations_total.load(Ordering::Relaxed)),
            ("nocode_total", c.nocode_total.load(Ordering::Relaxed)),
            ("worker_lost_total", c.worker_lost_total.load(Ordering::Relaxed)),
        ])
    }

    pub fn workers(&self) -> Vec<WorkerSnapshot> {
        let state = self.state.lock().unwrap();
        state.registry.snapshot(self.clock.now_ms())
    }

    pub fn is_connected(&self, worker: &WorkerId, min_epoch: u64) -> bool {
        let state = self.state.lock().unwrap();
        state.links.contains_key(worker)
            && state.registry.get(worker).is_some_and(|r| r.epoch >= min_epoch)
    }

    pub fn is_address_connected(&self, address: &str) -> bool {
        let state = self.state.lock().unwrap();
        state.links.values().any(|l| l.address == address)
    }

    pub fn connected_workers(&self) -> usize {
        self.state.lock().unwrap().links.len()
    }

    pub fn pending_invocations(&self) -> usize {
        self.state.lock().unwrap().calls.len()
    }
}

/// Invocation arguments must be a single JSON value of at most 8 MiB.
pub fn validate_args(args: &str) -> Result<(), CoreError> {
    if args.len() > MAX_ARGS_BYTES {
        return Err(CoreError::InvalidRequest("arguments exceed 8 MiB".into()));
    }
    serde_json::from_str::<serde::de::IgnoredAny>(args)
        .map(|_| ())
        .map_err(|e| CoreError::InvalidRequest(format!("arguments are not valid JSON: {e}")))
}
