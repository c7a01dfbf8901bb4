use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::{CorrelationId, FunctionId, ProtocolError, WorkerId};

/// `\0asm` followed by binary format version 1.
pub const WASM_PREAMBLE: [u8; 8] = [0x00, 0x61, 0x73, 0x6d, 0x01, 0x00, 0x00, 0x00];

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// The unit of deployment: a named Wasm binary plus its memory reservation.
#[derive(Clone, PartialEq, Eq)]
pub struct FunctionDescriptor {
    pub id: FunctionId,
    pub wasm: Bytes,
    pub reserved_memory_mb: u32,
    pub created_at: u64,
    pub updated_at: u64,
}

impl FunctionDescriptor {
    pub fn new(
        id: FunctionId,
        wasm: impl Into<Bytes>,
        reserved_memory_mb: u32,
        now: u64,
    ) -> Result<Self, ProtocolError> {
        let d = FunctionDescriptor {
            id,
            wasm: wasm.into(),
            reserved_memory_mb,
            created_at: now,
            updated_at: now,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !self.wasm.starts_with(&WASM_PREAMBLE) {
            return Err(ProtocolError::InvalidDescriptor(
                "binary does not start with the wasm v1 preamble".into(),
            ));
        }
        if self.reserved_memory_mb == 0 {
            return Err(ProtocolError::InvalidDescriptor(
                "reserved memory must be at least 1 MiB".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Debug for FunctionDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionDescriptor")
            .field("id", &self.id)
            .field("wasm_len", &self.wasm.len())
            .field("reserved_memory_mb", &self.reserved_memory_mb)
            .field("created_at", &self.created_at)
            .field("updated_at", &self.updated_at)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvocationEnvelope {
    pub correlation_id: CorrelationId,
    pub function_id: FunctionId,
    /// JSON text of the arguments.
    pub args: String,
    /// Absolute deadline, ms since epoch.
    pub deadline: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlatformErrorKind {
    NoWorkerAvailable,
    NotFound,
    Timeout,
    WorkerLost,
    GuestTrap,
    OutOfMemory,
    InvalidWasm,
}

impl PlatformErrorKind {
    pub const ALL: [PlatformErrorKind; 7] = [
        PlatformErrorKind::NoWorkerAvailable,
        PlatformErrorKind::NotFound,
        PlatformErrorKind::Timeout,
        PlatformErrorKind::WorkerLost,
        PlatformErrorKind::GuestTrap,
        PlatformErrorKind::OutOfMemory,
        PlatformErrorKind::InvalidWasm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlatformErrorKind::NoWorkerAvailable => "NoWorkerAvailable",
            PlatformErrorKind::NotFound => "NotFound",
            PlatformErrorKind::Timeout => "Timeout",
            PlatformErrorKind::WorkerLost => "WorkerLost",
            PlatformErrorKind::GuestTrap => "GuestTrap",
            PlatformErrorKind::OutOfMemory => "OutOfMemory",
            PlatformErrorKind::InvalidWasm => "InvalidWasm",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8 + 1
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }
}

impl fmt::Display for PlatformErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvocationOutcome {
    /// `payload` is JSON text.
    Ok { payload: String },
    FunctionError { message: String },
    PlatformError { kind: PlatformErrorKind, message: String },
}

impl InvocationOutcome {
    pub fn platform(kind: PlatformErrorKind, message: impl Into<String>) -> Self {
        InvocationOutcome::PlatformError { kind, message: message.into() }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, InvocationOutcome::Ok { .. })
    }

    pub fn platform_kind(&self) -> Option<PlatformErrorKind> {
        match self {
            InvocationOutcome::PlatformError { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}

/// Periodic worker self-report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub worker_id: WorkerId,
    pub free_memory_mb: u64,
    pub in_flight: u64,
    pub cache_bytes: u64,
    pub taken_at: u64,
}
