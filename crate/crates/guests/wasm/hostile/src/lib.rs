//! Misbehaving guest used to exercise trap containment and ABI checks.
//! The `mode` argument picks the misbehaviour.

use std::hint::black_box;
use std::sync::atomic::{AtomicU32, Ordering};

use fl_guest_sdk::{input, json, pack, pack_raw, sleep_ms, Value};

static STATE: AtomicU32 = AtomicU32::new(7);

#[no_mangle]
pub extern "C" fn _fl_run(ptr: i32, len: i32) -> i64 {
    let args: Value = serde_json(unsafe { input(ptr, len) });
    let mode = args.get("mode").and_then(Value::as_str).unwrap_or("");
    match mode {
        "trap" => core::arch::wasm32::unreachable(),
        "divzero" => {
            let zero = black_box(0i32);
            ok(json!(black_box(1i32) / zero))
        }
        "oom" => {
            let mut hog: Vec<Vec<u8>> = Vec::new();
            loop {
                hog.push(vec![1u8; 1 << 20]);
                black_box(&hog);
            }
        }
        "spin" => {
            let mut x = 0u64;
            loop {
                x = black_box(x.wrapping_add(1));
            }
        }
        "bad_offset" => pack_raw(0xFFFF_0000, 16),
        "bad_length" => pack_raw(0, u32::MAX),
        "no_payload" => pack(br#"{"status":"ok"}"#.to_vec()),
        "bad_utf8" => pack(vec![0xff, 0xfe, 0xfd]),
        "bad_shape" => pack(br#"{"status":"maybe"}"#.to_vec()),
        "state" => {
            // Observe, then clobber; a fresh instance always observes 7.
            let seen = STATE.swap(99, Ordering::SeqCst);
            sleep_ms(args.get("hold_ms").and_then(Value::as_u64).unwrap_or(0));
            ok(json!(seen))
        }
        "fail" => pack(serde_vec(&json!({"status": "error", "message": "asked to fail"}))),
        _ => ok(json!("unknown mode")),
    }
}

fn ok(payload: Value) -> i64 {
    pack(serde_vec(&json!({ "status": "ok", "payload": payload })))
}

fn serde_vec(v: &Value) -> Vec<u8> {
    fl_guest_sdk::serde_json::to_vec(v).unwrap()
}

fn serde_json(raw: &[u8]) -> Value {
    fl_guest_sdk::serde_json::from_slice(raw).unwrap_or(Value::Null)
}
