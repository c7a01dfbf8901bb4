//! Runs the bundled guest modules through the wasmtime runtime.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use fl_protocol::{now_ms, InvocationOutcome, PlatformErrorKind};
use fl_worker::{Allowlist, RunSpec, Runtime, WasmtimeRuntime};
use serde_json::{json, Value};

fn runtime() -> WasmtimeRuntime {
    WasmtimeRuntime::new(Allowlist::allow_all()).unwrap()
}

fn run_with(rt: &WasmtimeRuntime, wasm: &[u8], args: &str, reserved_mb: u32, budget_ms: u64) -> InvocationOutcome {
    let (module, size) = rt.compile(wasm).unwrap();
    assert!(size > 0);
    let spec = RunSpec { args, reserved_mb, deadline_ms: now_ms() + budget_ms };
    rt.run(&module, spec, &mut || {})
}

fn run(rt: &WasmtimeRuntime, wasm: &[u8], args: &str) -> InvocationOutcome {
    run_with(rt, wasm, args, 64, 10_000)
}

fn payload(outcome: InvocationOutcome) -> Value {
    match outcome {
        InvocationOutcome::Ok { payload } => serde_json::from_str(&payload).unwrap(),
        other => panic!("expected ok, got {other:?}"),
    }
}

#[test]
fn hello_greets() {
    let rt = runtime();
    assert_eq!(payload(run(&rt, fl_guests::HELLO, r#"{"name":"pi"}"#)), json!("Hello pi"));
    assert_eq!(payload(run(&rt, fl_guests::HELLO, "{}")), json!("Hello world"));
    assert!(matches!(run(&rt, fl_guests::HELLO, r#"{"name":5}"#), InvocationOutcome::FunctionError { .. }));
}

#[test]
fn matrix_mult_small_cases() {
    let rt = runtime();
    let id3 = json!([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
    let args = json!({"a": id3, "b": id3}).to_string();
    assert_eq!(payload(run(&rt, fl_guests::MATRIX_MULT, &args)), id3);
    let args = json!({"a": [[1, 2], [3, 4]], "b": [[5, 6], [7, 8]]}).to_string();
    assert_eq!(payload(run(&rt, fl_guests::MATRIX_MULT, &args)), json!([[19, 22], [43, 50]]));
    let args = json!({"a": [[1, 2], [3, 4]], "b": [[5, 6, 7]]}).to_string();
    assert!(matches!(run(&rt, fl_guests::MATRIX_MULT, &args), InvocationOutcome::FunctionError { .. }));
}

#[test]
fn traps_are_contained() {
    let rt = runtime();
    for mode in ["trap", "divzero", "bad_offset", "bad_length", "no_payload", "bad_utf8", "bad_shape"] {
        let out = run(&rt, fl_guests::HOSTILE, &json!({"mode": mode}).to_string());
        assert_eq!(out.platform_kind(), Some(PlatformErrorKind::GuestTrap), "{mode}: {out:?}");
    }
    let out = run(&rt, fl_guests::HOSTILE, r#"{"mode":"fail"}"#);
    assert_eq!(out, InvocationOutcome::FunctionError { message: "asked to fail".into() });
}

#[test]
fn memory_cap_yields_out_of_memory() {
    let rt = runtime();
    let out = run_with(&rt, fl_guests::HOSTILE, r#"{"mode":"oom"}"#, 16, 10_000);
    assert_eq!(out.platform_kind(), Some(PlatformErrorKind::OutOfMemory), "{out:?}");
}

#[test]
fn infinite_loop_hits_deadline() {
    let rt = runtime();
    let (module, _) = rt.compile(fl_guests::HOSTILE).unwrap();
    let start = Instant::now();
    let out = rt.run(&module, RunSpec { args: r#"{"mode":"spin"}"#, reserved_mb: 16, deadline_ms: now_ms() + 300 }, &mut || {});
    assert_eq!(out.platform_kind(), Some(PlatformErrorKind::Timeout), "{out:?}");
    assert!(start.elapsed() < Duration::from_secs(3));
}

#[test]
fn sleep_respects_deadline() {
    let rt = runtime();
    let (module, _) = rt.compile(fl_guests::SLEEP).unwrap();
    let start = Instant::now();
    let out = rt.run(&module, RunSpec { args: "{}", reserved_mb: 16, deadline_ms: now_ms() + 1_000 }, &mut || {});
    let elapsed = start.elapsed();
    assert_eq!(out.platform_kind(), Some(PlatformErrorKind::Timeout), "{out:?}");
    assert!(elapsed >= Duration::from_millis(900) && elapsed < Duration::from_millis(2500), "{elapsed:?}");
}

#[test]
fn sleep_takes_three_seconds() {
    let rt = runtime();
    let start = Instant::now();
    assert_eq!(payload(run(&rt, fl_guests::SLEEP, "{}")), json!("Slept for 3 seconds"));
    assert!(start.elapsed() >= Duration::from_millis(3000));
}

#[test]
fn instances_do_not_share_state() {
    let rt = Arc::new(runtime());
    let (module, _) = rt.compile(fl_guests::HOSTILE).unwrap();
    let handles: Vec<_> = (0..2)
        .map(|_| {
            let rt = rt.clone();
            let module = module.clone();
            thread::spawn(move || {
                let spec = RunSpec { args: r#"{"mode":"state","hold_ms":200}"#, reserved_mb: 16, deadline_ms: now_ms() + 5000 };
                rt.run(&module, spec, &mut || {})
            })
        })
        .collect();
    for h in handles {
        assert_eq!(payload(h.join().unwrap()), json!(7));
    }
    // Sequential reuse of the same compiled module also starts fresh.
    let spec = RunSpec { args: r#"{"mode":"state"}"#, reserved_mb: 16, deadline_ms: now_ms() + 5000 };
    assert_eq!(payload(rt.run(&module, spec, &mut || {})), json!(7));
}

#[test]
fn hostile_soak_then_normal_service() {
    let rt = runtime();
    let (hostile, _) = rt.compile(fl_guests::HOSTILE).unwrap();
    let (hello, _) = rt.compile(fl_guests::HELLO).unwrap();
    let modes = ["trap", "divzero", "oom", "spin", "bad_offset", "bad_length", "no_payload", "bad_utf8", "bad_shape", "fail"];
    for i in 0..100 {
        let args = json!({"mode": modes[i % modes.len()]}).to_string();
        let spec = RunSpec { args: &args, reserved_mb: 16, deadline_ms: now_ms() + 100 };
        assert!(!rt.run(&hostile, spec, &mut || {}).is_ok());
    }
    for i in 0..100 {
        let args = json!({"name": i.to_string()}).to_string();
        let spec = RunSpec { args: &args, reserved_mb: 16, deadline_ms: now_ms() + 5000 };
        assert_eq!(payload(rt.run(&hello, spec, &mut || {})), json!(format!("Hello {i}")));
    }
}

#[test]
fn on_start_fires_once_per_run() {
    let rt = runtime();
    let (module, _) = rt.compile(fl_guests::HELLO).unwrap();
    let mut starts = 0;
    let spec = RunSpec { args: "{}", reserved_mb: 16, deadline_ms: now_ms() + 5000 };
    rt.run(&module, spec, &mut || starts += 1);
    assert_eq!(starts, 1);
}

#[test]
fn corrupt_module_fails_to_compile() {
    let rt = runtime();
    let mut bad = fl_guests::HELLO.to_vec();
    bad.truncate(bad.len() / 2);
    assert!(rt.compile(&bad).is_err());
}

#[test]
fn echo_preserves_values() {
    let rt = runtime();
    let (module, _) = rt.compile(fl_guests::ECHO).unwrap();
    for v in [
        json!(null),
        json!(0.1),
        json!(-1.5e300),
        json!(i64::MIN),
        json!(u64::MAX),
        json!("tab\t\"quote\" \u{1F600}"),
        json!({"nested": [1, {"x": []}, {}]}),
    ] {
        let text = v.to_string();
        let spec = RunSpec { args: &text, reserved_mb: 64, deadline_ms: now_ms() + 5000 };
        assert_eq!(payload(rt.run(&module, spec, &mut || {})), v);
    }
}
