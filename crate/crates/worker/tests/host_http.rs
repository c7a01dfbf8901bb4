//! Guests reaching the network through the host HTTP shim.

use std::net::SocketAddr;
use std::time::Instant;

use axum::routing::get;
use axum::Router;
use fl_protocol::{now_ms, InvocationOutcome};
use fl_worker::host::host_http;
use fl_worker::{Allowlist, RunSpec, Runtime, WasmtimeRuntime};
use serde_json::{json, Value};

/// Minimal echo server: GET answers "ok", POST echoes the body.
fn echo_server() -> SocketAddr {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let app = Router::new().route("/", get(|| async { "ok" }).post(|body: String| async move { body }));
    std::thread::spawn(move || rt.block_on(async { axum::serve(listener, app).await.unwrap() }));
    addr
}

fn run(rt: &WasmtimeRuntime, wasm: &[u8], args: &Value) -> InvocationOutcome {
    let (module, _) = rt.compile(wasm).unwrap();
    let args = args.to_string();
    rt.run(&module, RunSpec { args: &args, reserved_mb: 32, deadline_ms: now_ms() + 20_000 }, &mut || {})
}

#[test]
fn server_reply_round_trip() {
    let addr = echo_server();
    let rt = WasmtimeRuntime::new(Allowlist::allow_all()).unwrap();
    for message in ["ping", "", "ünïcode ✓"] {
        let out = run(&rt, fl_guests::SERVER_REPLY, &json!({"target_url": format!("http://{addr}/"), "message": message}));
        let InvocationOutcome::Ok { payload } = out else { panic!("{out:?}") };
        let v: Value = serde_json::from_str(&payload).unwrap();
        assert_eq!(v, json!({"reply": message}));
    }
}

#[test]
fn network_benchmark_counts() {
    let addr = echo_server();
    let rt = WasmtimeRuntime::new(Allowlist::allow_all()).unwrap();
    let url = format!("http://{addr}/");
    let out = run(&rt, fl_guests::NETWORK, &json!({"target_url": url}));
    let InvocationOutcome::Ok { payload } = out else { panic!("{out:?}") };
    let v: Value = serde_json::from_str(&payload).unwrap();
    let d = v["durations_ms"].as_array().unwrap();
    assert_eq!(d.len(), 16);
    assert!(d.iter().all(|x| x.as_f64().unwrap() >= 0.0));

    let out = run(&rt, fl_guests::NETWORK, &json!({"target_url": url, "count": 0}));
    let InvocationOutcome::Ok { payload } = out else { panic!("{out:?}") };
    assert_eq!(serde_json::from_str::<Value>(&payload).unwrap(), json!({"durations_ms": []}));
}

#[test]
fn denied_host_is_a_function_error() {
    let rt = WasmtimeRuntime::new(Allowlist::new(["example.org"])).unwrap();
    let out = run(&rt, fl_guests::SERVER_REPLY, &json!({"target_url": "http://127.0.0.1:9/", "message": "x"}));
    assert!(matches!(out, InvocationOutcome::FunctionError { .. }), "{out:?}");
}

#[test]
fn shim_get_and_denial() {
    let addr = echo_server();
    let req = json!({"method": "GET", "url": format!("http://{addr}/"), "headers": {}, "body": "", "timeout_ms": 2000});
    let resp = host_http(req.to_string().as_bytes(), &Allowlist::allow_all(), None);
    assert_eq!(resp["status_code"], 200);

    let resp = host_http(req.to_string().as_bytes(), &Allowlist::new(["*.example.org"]), None);
    assert_eq!(resp, json!({"error": "denied"}));
}

#[test]
fn shim_times_out_on_silent_server() {
    // Accepts connections but never answers.
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let held: Vec<_> = listener.incoming().take(1).collect();
        std::thread::sleep(std::time::Duration::from_secs(5));
        drop(held);
    });
    let req = json!({"method": "GET", "url": format!("http://{addr}/"), "headers": {}, "body": "", "timeout_ms": 200});
    let start = Instant::now();
    let resp = host_http(req.to_string().as_bytes(), &Allowlist::allow_all(), None);
    assert_eq!(resp, json!({"error": "timeout"}), "{resp}");
    assert!(start.elapsed().as_millis() < 2000);
}
