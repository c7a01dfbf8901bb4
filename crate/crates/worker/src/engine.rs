//! Execution engine abstraction and its wasmtime implementation.
//!
//! Every invocation gets a fresh store and instance. Linear memory is capped
//! at the function's reserved memory, and the invocation deadline is
//! enforced through epoch interruption (guest code) and explicit budget
//! checks (host calls).

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use fl_protocol::{now_ms, InvocationOutcome, PlatformErrorKind, MIB};
use thiserror::Error;
use wasmtime::{Caller, Config, Engine, Extern, Linker, Module, ResourceLimiter, Store, Trap};
use wasmtime_wasi::p1::{self, WasiP1Ctx};
use wasmtime_wasi::WasiCtxBuilder;

use crate::abi::{self, AbiViolation, Exports};
use crate::host::{host_http, Allowlist};

/// Granularity of deadline enforcement inside guest code.
const EPOCH_TICK: Duration = Duration::from_millis(5);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("compilation failed: {0}")]
pub struct CompileError(pub String);

/// Per-invocation execution parameters.
#[derive(Debug, Clone, Copy)]
pub struct RunSpec<'a> {
    pub args: &'a str,
    pub reserved_mb: u32,
    /// Absolute deadline, ms since epoch.
    pub deadline_ms: u64,
}

/// What a worker needs from a Wasm engine.
pub trait Runtime: Send + Sync + 'static {
    /// Precompiled, instantiable module handle.
    type Module: Clone + Send + Sync + 'static;

    /// Compiles a binary, returning the handle and its in-memory size.
    fn compile(&self, wasm: &[u8]) -> Result<(Self::Module, u64), CompileError>;

    /// Runs the module once in a fresh instance. `on_start` fires right
    /// before the guest entry point is entered.
    fn run(&self, module: &Self::Module, spec: RunSpec<'_>, on_start: &mut dyn FnMut()) -> InvocationOutcome;
}

#[derive(Debug)]
struct DeadlineExceeded;

impl fmt::Display for DeadlineExceeded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invocation deadline exceeded")
    }
}

impl std::error::Error for DeadlineExceeded {}

struct MemoryCap {
    max_bytes: usize,
    denied: bool,
}

impl ResourceLimiter for MemoryCap {
    fn memory_growing(&mut self, _current: usize, desired: usize, _maximum: Option<usize>) -> wasmtime::Result<bool> {
        if desired > self.max_bytes {
            self.denied = true;
            return Ok(false);
        }
        Ok(true)
    }

    fn table_growing(&mut self, _current: usize, desired: usize, _maximum: Option<usize>) -> wasmtime::Result<bool> {
        Ok(desired <= 1 << 20)
    }
}

struct HostState {
    wasi: WasiP1Ctx,
    cap: MemoryCap,
    deadline_ms: u64,
    allowlist: Arc<Allowlist>,
}

impl HostState {
    fn remaining(&self) -> Duration {
        Duration::from_millis(self.deadline_ms.saturating_sub(now_ms()))
    }
}

#[derive(Clone)]
pub struct WasmtimeRuntime {
    inner: Arc<Inner>,
}

struct Inner {
    engine: Engine,
    linker: Linker<HostState>,
    allowlist: Arc<Allowlist>,
    stop: Arc<AtomicBool>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

impl WasmtimeRuntime {
    pub fn new(allowlist: Allowlist) -> anyhow::Result<Self> {
        let mut config = Config::new();
        config.epoch_interruption(true);
        let engine = Engine::new(&config).map_err(|e| anyhow::anyhow!("{e}"))?;

        let mut linker: Linker<HostState> = Linker::new(&engine);
        p1::add_to_linker_sync(&mut linker, |s: &mut HostState| &mut s.wasi).map_err(|e| anyhow::anyhow!("{e}"))?;
        add_host_functions(&mut linker).map_err(|e| anyhow::anyhow!("{e}"))?;

        let stop = Arc::new(AtomicBool::new(false));
        let ticker_engine = engine.weak();
        let ticker_stop = stop.clone();
        thread::Builder::new().name("fl-epoch".into()).spawn(move || {
            while !ticker_stop.load(Ordering::Relaxed) {
                thread::sleep(EPOCH_TICK);
                match ticker_engine.upgrade() {
                    Some(engine) => engine.increment_epoch(),
                    None => break,
                }
            }
        })?;

        Ok(WasmtimeRuntime { inner: Arc::new(Inner { engine, linker, allowlist: Arc::new(allowlist), stop }) })
    }

    fn execute(&self, module: &Module, spec: RunSpec<'_>, on_start: &mut dyn FnMut()) -> wasmtime::Result<Vec<u8>> {
        let state = HostState {
            wasi: WasiCtxBuilder::new().build_p1(),
            cap: MemoryCap { max_bytes: (u64::from(spec.reserved_mb) * MIB) as usize, denied: false },
            deadline_ms: spec.deadline_ms,
            allowlist: self.inner.allowlist.clone(),
        };
        let mut store = Store::new(&self.inner.engine, state);
        store.limiter(|s| &mut s.cap);
        let ticks = store.data().remaining().as_millis() as u64 / EPOCH_TICK.as_millis() as u64 + 1;
        store.set_epoch_deadline(ticks);
        store.epoch_deadline_trap();

        let instance = self.inner.linker.instantiate(&mut store, module)?;
        if let Ok(init) = instance.get_typed_func::<(), ()>(&mut store, "_initialize") {
            init.call(&mut store, ())?;
        }
        let exports = Exports::resolve(&mut store, &instance)?;
        let result = abi::call_guest(&mut store, &exports, spec.args.as_bytes(), on_start);
        // Keep the OOM marker reachable for classification after the store is gone.
        result.map_err(|e| if store.data().cap.denied { e.context(OutOfMemoryMarker) } else { e })
    }
}

#[derive(Debug)]
struct OutOfMemoryMarker;

impl fmt::Display for OutOfMemoryMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("guest exceeded its reserved memory")
    }
}

fn classify(err: wasmtime::Error) -> InvocationOutcome {
    let message = format!("{err:#}");
    if err.downcast_ref::<OutOfMemoryMarker>().is_some() {
        return InvocationOutcome::platform(PlatformErrorKind::OutOfMemory, message);
    }
    if err.downcast_ref::<DeadlineExceeded>().is_some() || err.downcast_ref::<Trap>() == Some(&Trap::Interrupt) {
        return InvocationOutcome::platform(PlatformErrorKind::Timeout, "invocation deadline exceeded");
    }
    if let Some(v) = err.downcast_ref::<AbiViolation>() {
        return InvocationOutcome::platform(PlatformErrorKind::GuestTrap, v.to_string());
    }
    InvocationOutcome::platform(PlatformErrorKind::GuestTrap, message)
}

impl Runtime for WasmtimeRuntime {
    type Module = Module;

    fn compile(&self, wasm: &[u8]) -> Result<(Module, u64), CompileError> {
        let engine = &self.inner.engine;
        let artifact = engine.precompile_module(wasm).map_err(|e| CompileError(format!("{e:#}")))?;
        // SAFETY: the artifact was produced just above by this same engine.
        let module = unsafe { Module::deserialize(engine, &artifact) }.map_err(|e| CompileError(format!("{e:#}")))?;
        Ok((module, artifact.len() as u64))
    }

    fn run(&self, module: &Module, spec: RunSpec<'_>, on_start: &mut dyn FnMut()) -> InvocationOutcome {
        if now_ms() >= spec.deadline_ms {
            return InvocationOutcome::platform(PlatformErrorKind::Timeout, "deadline passed before start");
        }
        match self.execute(module, spec, on_start) {
            Ok(response) => abi::parse_envelope(&response)
                .unwrap_or_else(|v| InvocationOutcome::platform(PlatformErrorKind::GuestTrap, v.to_string())),
            Err(e) => classify(e),
        }
    }
}

fn guest_memory(caller: &mut Caller<'_, HostState>) -> wasmtime::Result<wasmtime::Memory> {
    match caller.get_export("memory") {
        Some(Extern::Memory(m)) => Ok(m),
        _ => Err(wasmtime::Error::new(AbiViolation("missing `memory` export".into()))),
    }
}

fn read_guest(caller: &mut Caller<'_, HostState>, ptr: i32, len: i32) -> wasmtime::Result<Vec<u8>> {
    let memory = guest_memory(caller)?;
    let range = abi::region(memory.data_size(&*caller), ptr as u32, len as u32).map_err(wasmtime::Error::new)?;
    Ok(memory.data(&*caller)[range].to_vec())
}

fn add_host_functions(linker: &mut Linker<HostState>) -> wasmtime::Result<()> {
    linker.func_wrap("funless", "fl_log", |mut caller: Caller<'_, HostState>, ptr: i32, len: i32| {
        let msg = read_guest(&mut caller, ptr, len)?;
        tracing::info!(target: "guest", "{}", String::from_utf8_lossy(&msg));
        Ok(())
    })?;

    linker.func_wrap("funless", "fl_sleep", |caller: Caller<'_, HostState>, ms: i64| {
        let want = Duration::from_millis(ms.max(0) as u64);
        let remaining = caller.data().remaining();
        if want > remaining {
            thread::sleep(remaining);
            return Err(wasmtime::Error::new(DeadlineExceeded));
        }
        thread::sleep(want);
        Ok(())
    })?;

    linker.func_wrap(
        "funless",
        "fl_http",
        |mut caller: Caller<'_, HostState>, ptr: i32, len: i32| -> wasmtime::Result<i64> {
            let request = read_guest(&mut caller, ptr, len)?;
            let budget = caller.data().remaining();
            let response = host_http(&request, &caller.data().allowlist, Some(budget));
            if caller.data().remaining().is_zero() {
                return Err(wasmtime::Error::new(DeadlineExceeded));
            }
            let bytes = serde_json::to_vec(&response)?;
            let memory = guest_memory(&mut caller)?;
            let alloc = caller
                .get_export("_fl_alloc")
                .and_then(Extern::into_func)
                .ok_or_else(|| wasmtime::Error::new(AbiViolation("missing `_fl_alloc` export".into())))?
                .typed::<i32, i32>(&caller)?;
            let offset = abi::write_input(&mut caller, &memory, &alloc, &bytes)?;
            Ok(abi::pack(offset, bytes.len() as u32))
        },
    )?;

    Ok(())
}
