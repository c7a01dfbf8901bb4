//! Benchmark harness: closed-loop load generation, latency CDFs, memory
//! sampling, the echo target used by network guests, and a fault-injecting
//! proxy.

pub mod cdf;
pub mod cli;
pub mod echo;
pub mod memory;
pub mod plan;
pub mod proxy;

use thiserror::Error;

pub use cdf::{emit_cdf, percentile};
pub use echo::EchoServer;
pub use memory::{rss_bytes, sample_memory, MemoryReport, Process};
pub use plan::{invoke_once, run_plan, LatencyRecord, LoadPlan, Mode, Target};
pub use proxy::FaultProxy;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no successful records")]
    EmptyInput,
    #[error("unknown process: {0}")]
    UnknownProcess(String),
    #[error("core unreachable: {0}")]
    CoreUnreachable(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("i/o: {0}")]
    Io(String),
}
