//! Drives the CLI against an in-process Core and worker.

use std::time::{Duration, Instant};

use fl_core::{CoreConfig, CoreHandle};
use fl_store::StoreConfig;
use fl_worker::{WasmtimeRuntime, WorkerConfig, WorkerHandle};
use serde_json::Value;

const TOKEN: &str = "cli-token";

struct Env {
    rt: tokio::runtime::Runtime,
    core: Option<CoreHandle>,
    _worker: Option<WorkerHandle<WasmtimeRuntime>>,
    dir: tempfile::TempDir,
}

impl Drop for Env {
    fn drop(&mut self) {
        let _guard = self.rt.enter();
        self.core.take();
        self._worker.take();
    }
}

impl Env {
    fn start() -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let (core, worker) = rt.block_on(async {
            let worker = fl_worker::launch(&WorkerConfig {
                listen: "127.0.0.1:0".parse().unwrap(),
                multicast: false,
                metrics_period_ms: 200,
                ..WorkerConfig::default()
            })
            .await
            .unwrap();
            let core = fl_core::launch(&CoreConfig {
                http_listen: "127.0.0.1:0".parse().unwrap(),
                discovery_listen: None,
                static_workers: vec![worker.listen_addr.to_string()],
                redial_period_ms: 200,
                token: Some(TOKEN.into()),
                store: StoreConfig::InMemory,
                ..CoreConfig::default()
            })
            .await
            .unwrap();
            let start = Instant::now();
            while !core.core.workers().iter().any(|w| w.live) {
                assert!(start.elapsed() < Duration::from_secs(10));
                tokio::time::sleep(Duration::from_millis(20)).await;
            }
            (core, worker)
        });
        let dir = tempfile::tempdir().unwrap();
        for (name, wasm) in fl_guests::ALL {
            std::fs::write(dir.path().join(format!("{name}.wasm")), wasm).unwrap();
        }
        Env { rt, core: Some(core), _worker: Some(worker), dir }
    }

    fn wasm(&self, name: &str) -> String {
        self.dir.path().join(format!("{name}.wasm")).display().to_string()
    }

    fn fl(&self, args: &[&str]) -> (i32, String, String) {
        let url = format!("http://{}", self.core.as_ref().unwrap().http_addr);
        let mut full = vec!["fl", "--core-url", &url, "--token", TOKEN];
        full.extend_from_slice(args);
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = fl_cli::run(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }
}

#[test]
fn command_exit_codes() {
    let env = Env::start();
    let hello = env.wasm("hello");

    let (code, out, _) = env.fl(&["upload", "bench", "hello", &hello, "--memory-mb", "64"]);
    assert_eq!(code, 0);
    assert!(out.contains("bench/hello"));

    let (code, _, err) = env.fl(&["upload", "bench", "hello", &hello]);
    assert_eq!(code, 1);
    assert!(err.contains("already exists"), "{err}");

    let (code, _, _) = env.fl(&["upload", "bench", "nofile", "/no/such/file.wasm"]);
    assert_eq!(code, 2);

    let (code, out, _) = env.fl(&["invoke", "bench", "hello", r#"{"name":"x"}"#]);
    assert_eq!((code, out.as_str()), (0, "\"Hello x\"\n"));

    let (code, _, err) = env.fl(&["invoke", "bench", "hello", r#"{"name":5}"#]);
    assert_eq!(code, 3, "{err}");

    let (code, _, _) = env.fl(&["invoke", "bench", "missing", "{}"]);
    assert_eq!(code, 1);

    let (code, _, _) = env.fl(&["invoke", "bench", "hello", "not-json"]);
    assert_eq!(code, 2);

    let args_file = env.dir.path().join("args.json");
    std::fs::write(&args_file, r#"{"name":"file"}"#).unwrap();
    let (code, out, _) = env.fl(&["invoke", "bench", "hello", &format!("@{}", args_file.display())]);
    assert_eq!((code, out.as_str()), (0, "\"Hello file\"\n"));

    let (code, _, _) = env.fl(&["upload", "bench", "echo", &env.wasm("echo")]);
    assert_eq!(code, 0);
    let (code, out, _) = env.fl(&["list"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 3, "{out}");

    let (code, out, _) = env.fl(&["update", "bench", "hello", &env.wasm("echo")]);
    assert_eq!(code, 0, "{out}");

    let (code, out, _) = env.fl(&["workers"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 2, "{out}");
    assert!(out.contains("FREE_MB"));

    let (code, _, _) = env.fl(&["delete", "bench", "echo"]);
    assert_eq!(code, 0);
    let (code, _, _) = env.fl(&["delete", "bench", "echo"]);
    assert_eq!(code, 1);
}

#[test]
fn json_output_parses() {
    let env = Env::start();
    env.fl(&["upload", "bench", "hello", &env.wasm("hello")]);
    for args in [
        vec!["--json", "list"],
        vec!["--json", "workers"],
        vec!["--json", "get", "bench", "hello"],
        vec!["--json", "invoke", "bench", "hello", "{}"],
        vec!["--json", "upload", "bench", "echo", &env.wasm("echo")],
        vec!["--json", "delete", "bench", "echo"],
    ] {
        let (code, out, err) = env.fl(&args);
        assert_eq!(code, 0, "{args:?}: {err}");
        let _: Value = serde_json::from_str(&out).unwrap_or_else(|e| panic!("{args:?}: {e}: {out}"));
    }
}

#[test]
fn wrong_token_fails() {
    let env = Env::start();
    let url = format!("http://{}", env.core.as_ref().unwrap().http_addr);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = fl_cli::run(["fl", "--core-url", &url, "--token", "nope", "list"], &mut out, &mut err);
    assert_eq!(code, 1);
    assert!(String::from_utf8(err).unwrap().contains("401"));
}
