//! Host side of the guest wrapper contract.
//!
//! The host obtains an input region with `_fl_alloc(len)`, writes the JSON
//! arguments there, calls `_fl_run(ptr, len)` and decodes the returned i64
//! as `offset << 32 | length` of the response envelope.

use std::collections::HashMap;
use std::fmt;

use fl_protocol::InvocationOutcome;
use serde_json::value::RawValue;
use wasmtime::{AsContextMut, Instance, Memory, TypedFunc};

/// Largest accepted response envelope.
pub const MAX_RESPONSE_BYTES: usize = 8 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbiViolation(pub String);

impl fmt::Display for AbiViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ABI violation: {}", self.0)
    }
}

impl std::error::Error for AbiViolation {}

fn violation(msg: impl Into<String>) -> wasmtime::Error {
    wasmtime::Error::new(AbiViolation(msg.into()))
}

pub fn unpack(packed: i64) -> (u32, u32) {
    let packed = packed as u64;
    ((packed >> 32) as u32, packed as u32)
}

pub fn pack(offset: u32, len: u32) -> i64 {
    ((u64::from(offset) << 32) | u64::from(len)) as i64
}

/// Resolves `[offset, offset+len)` inside `memory`, or fails.
pub fn region(memory_size: usize, offset: u32, len: u32) -> Result<std::ops::Range<usize>, AbiViolation> {
    let start = offset as usize;
    match start.checked_add(len as usize) {
        Some(end) if end <= memory_size => Ok(start..end),
        _ => Err(AbiViolation(format!(
            "region {offset}+{len} outside linear memory of {memory_size} bytes"
        ))),
    }
}

pub(crate) struct Exports {
    pub memory: Memory,
    pub alloc: TypedFunc<i32, i32>,
    pub run: TypedFunc<(i32, i32), i64>,
}

impl Exports {
    pub fn resolve(mut store: impl AsContextMut, instance: &Instance) -> wasmtime::Result<Self> {
        let mut store = store.as_context_mut();
        let memory = instance
            .get_memory(&mut store, "memory")
            .ok_or_else(|| violation("missing `memory` export"))?;
        let alloc = instance
            .get_typed_func::<i32, i32>(&mut store, "_fl_alloc")
            .map_err(|e| violation(format!("`_fl_alloc`: {e}")))?;
        let run = instance
            .get_typed_func::<(i32, i32), i64>(&mut store, "_fl_run")
            .map_err(|e| violation(format!("`_fl_run`: {e}")))?;
        Ok(Exports { memory, alloc, run })
    }
}

/// Copies `bytes` into a fresh guest region, returning its offset.
pub(crate) fn write_input(
    mut store: impl AsContextMut,
    memory: &Memory,
    alloc: &TypedFunc<i32, i32>,
    bytes: &[u8],
) -> wasmtime::Result<u32> {
    let len = i32::try_from(bytes.len()).map_err(|_| violation("input larger than 2 GiB"))?;
    let ptr = alloc.call(&mut store, len)? as u32;
    let range = region(memory.data_size(&store), ptr, len as u32).map_err(wasmtime::Error::new)?;
    memory.data_mut(&mut store)[range].copy_from_slice(bytes);
    Ok(ptr)
}

/// Drives one call through the wrapper and returns the raw response bytes.
pub(crate) fn call_guest(
    mut store: impl AsContextMut,
    exports: &Exports,
    input: &[u8],
    on_start: &mut dyn FnMut(),
) -> wasmtime::Result<Vec<u8>> {
    let ptr = write_input(&mut store, &exports.memory, &exports.alloc, input)?;
    on_start();
    let packed = exports.run.call(&mut store, (ptr as i32, input.len() as i32))?;
    let (offset, len) = unpack(packed);
    if len as usize > MAX_RESPONSE_BYTES {
        return Err(violation(format!("response of {len} bytes exceeds limit")));
    }
    let range = region(exports.memory.data_size(&store), offset, len).map_err(wasmtime::Error::new)?;
    Ok(exports.memory.data(&store)[range].to_vec())
}

/// Validates a response envelope and maps it onto an outcome. The payload
/// text is passed through exactly as the guest produced it.
pub fn parse_envelope(bytes: &[u8]) -> Result<InvocationOutcome, AbiViolation> {
    let text = std::str::from_utf8(bytes).map_err(|_| AbiViolation("response is not UTF-8".into()))?;
    let fields: HashMap<String, &RawValue> =
        serde_json::from_str(text).map_err(|e| AbiViolation(format!("response is not a JSON object: {e}")))?;
    let status = fields
        .get("status")
        .and_then(|s| serde_json::from_str::<&str>(s.get()).ok())
        .ok_or_else(|| AbiViolation("response lacks a string `status`".into()))?;
    match status {
        "ok" => {
            let payload = fields
                .get("payload")
                .ok_or_else(|| AbiViolation("ok response lacks `payload`".into()))?;
            Ok(InvocationOutcome::Ok { payload: payload.get().to_string() })
        }
        "error" => {
            let message = fields
                .get("message")
                .and_then(|m| serde_json::from_str::<String>(m.get()).ok())
                .ok_or_else(|| AbiViolation("error response lacks a string `message`".into()))?;
            Ok(InvocationOutcome::FunctionError { message })
        }
        other => Err(AbiViolation(format!("unknown status {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_unpack() {
        assert_eq!(unpack(pack(0x1234, 0xffff_ffff)), (0x1234, 0xffff_ffff));
        assert_eq!(unpack(pack(u32::MAX, 7)), (u32::MAX, 7));
    }

    #[test]
    fn region_bounds() {
        assert_eq!(region(100, 90, 10), Ok(90..100));
        assert!(region(100, 90, 11).is_err());
        assert!(region(100, u32::MAX, u32::MAX).is_err());
    }

    #[test]
    fn envelopes() {
        assert_eq!(
            parse_envelope(br#"{"status":"ok","payload":"Hello a"}"#),
            Ok(InvocationOutcome::Ok { payload: r#""Hello a""#.into() })
        );
        assert_eq!(
            parse_envelope(br#"{"status":"ok","payload":null}"#),
            Ok(InvocationOutcome::Ok { payload: "null".into() })
        );
        assert_eq!(
            parse_envelope(br#"{"status":"error","message":"boom"}"#),
            Ok(InvocationOutcome::FunctionError { message: "boom".into() })
        );
        for bad in [
            &br#"{"status":"ok"}"#[..],
            br#"{"status":"error"}"#,
            br#"{"status":"maybe","payload":1}"#,
            br#"[1,2]"#,
            b"\xff\xfe",
            br#"{"payload":1}"#,
        ] {
            assert!(parse_envelope(bad).is_err(), "{:?}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn payload_text_is_preserved_verbatim() {
        let out = parse_envelope(br#"{"status":"ok","payload":{"x":1.5e300,"y":[1,2]}}"#).unwrap();
        assert_eq!(out, InvocationOutcome::Ok { payload: r#"{"x":1.5e300,"y":[1,2]}"#.into() });
    }
}
