//! Core and workers in one process, talking over real sockets.

use std::sync::Arc;
use std::time::{Duration, Instant};

use fl_core::{CoreConfig, CoreHandle};
use fl_protocol::{FunctionId, InvocationOutcome, PlatformErrorKind, MIB};
use fl_store::StoreConfig;
use fl_worker::{WasmtimeRuntime, WorkerConfig, WorkerHandle};
use serde_json::{json, Value};

const TOKEN: &str = "test-token";

fn core_config(workers: Vec<String>) -> CoreConfig {
    CoreConfig {
        http_listen: "127.0.0.1:0".parse().unwrap(),
        discovery_listen: None,
        multicast: false,
        static_workers: workers,
        redial_period_ms: 200,
        token: Some(TOKEN.into()),
        metrics_period_ms: 200,
        liveness_timeout_ms: 2_000,
        store: StoreConfig::InMemory,
        ..CoreConfig::default()
    }
}

fn worker_config() -> WorkerConfig {
    WorkerConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        metrics_listen: None,
        capacity_mb: 1024,
        cache_threshold_bytes: 256 * MIB,
        metrics_period_ms: 200,
        announce_period_ms: 200,
        multicast: false,
        parallelism: 4,
        ..WorkerConfig::default()
    }
}

async fn wait_until(what: &str, mut cond: impl FnMut() -> bool) {
    let start = Instant::now();
    while !cond() {
        assert!(start.elapsed() < Duration::from_secs(20), "timed out waiting for {what}");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

struct Cluster {
    core: CoreHandle,
    workers: Vec<WorkerHandle<WasmtimeRuntime>>,
}

impl Cluster {
    async fn start(n: usize) -> Self {
        let mut workers = Vec::new();
        for _ in 0..n {
            workers.push(fl_worker::launch(&worker_config()).await.unwrap());
        }
        let addrs = workers.iter().map(|w| w.listen_addr.to_string()).collect();
        let core = fl_core::launch(&core_config(addrs)).await.unwrap();
        let c = Cluster { core, workers };
        c.wait_live(n).await;
        c
    }

    async fn wait_live(&self, n: usize) {
        let core = self.core.core.clone();
        wait_until("live workers", || core.workers().iter().filter(|w| w.live).count() == n).await;
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.core.http_addr, path)
    }
}

fn fid(name: &str) -> FunctionId {
    FunctionId::new("bench", name).unwrap()
}

async fn invoke(c: &Cluster, name: &str, args: &str) -> InvocationOutcome {
    c.core.core.invoke(fid(name), args.into(), None).await.unwrap().outcome
}

fn counter(w: &WorkerHandle<WasmtimeRuntime>, name: &str) -> u64 {
    fl_worker::parse_metrics_text(&w.service.metrics_text())[name].parse().unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn create_broadcasts_to_all_workers() {
    let c = Cluster::start(2).await;
    c.core.core.create_function(fid("hello"), fl_guests::HELLO.to_vec(), 64).await.unwrap();
    for w in &c.workers {
        wait_until("broadcast compile", || w.service.is_cached(&fid("hello"))).await;
    }
    for i in 0..20 {
        let out = invoke(&c, "hello", &json!({"name": i.to_string()}).to_string()).await;
        assert_eq!(out, InvocationOutcome::Ok { payload: format!("\"Hello {i}\"") });
    }
    for w in &c.workers {
        assert_eq!(counter(w, "compile_total"), 1);
        assert_eq!(counter(w, "nocode_total"), 0);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn lifecycle_errors() {
    let c = Cluster::start(1).await;
    let core = &c.core.core;
    core.create_function(fid("a"), fl_guests::HELLO.to_vec(), 64).await.unwrap();
    core.create_function(fid("b"), fl_guests::ECHO.to_vec(), 64).await.unwrap();
    assert!(matches!(
        core.create_function(fid("a"), fl_guests::HELLO.to_vec(), 64).await,
        Err(fl_core::CoreError::AlreadyExists(_))
    ));
    assert!(matches!(
        core.create_function(fid("c"), b"hello".to_vec(), 64).await,
        Err(fl_core::CoreError::InvalidWasm(_))
    ));
    assert!(matches!(
        core.update_function(fid("zzz"), fl_guests::HELLO.to_vec(), 64).await,
        Err(fl_core::CoreError::NotFound(_))
    ));
    let mut ids = core.list_functions().await.unwrap();
    ids.sort();
    assert_eq!(ids, vec![fid("a"), fid("b")]);

    core.delete_function(fid("a")).await.unwrap();
    assert_eq!(invoke(&c, "a", "{}").await.platform_kind(), Some(PlatformErrorKind::NotFound));
    assert!(matches!(core.delete_function(fid("a")).await, Err(fl_core::CoreError::NotFound(_))));
    wait_until("eviction", || !c.workers[0].service.is_cached(&fid("a"))).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn update_reaches_every_worker() {
    let c = Cluster::start(2).await;
    let core = &c.core.core;
    core.create_function(fid("f"), fl_guests::HELLO.to_vec(), 64).await.unwrap();
    for w in &c.workers {
        wait_until("create compile", || counter(w, "compile_total") == 1).await;
    }
    assert_eq!(invoke(&c, "f", r#"{"name":"v"}"#).await, InvocationOutcome::Ok { payload: "\"Hello v\"".into() });
    let before = core.get_function(fid("f")).await.unwrap();
    let after = core.update_function(fid("f"), fl_guests::ECHO.to_vec(), 64).await.unwrap();
    assert_eq!(after.created_at, before.created_at);
    assert!(after.updated_at > before.updated_at);
    for w in &c.workers {
        wait_until("update compile", || counter(w, "compile_total") == 2).await;
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..10 {
        let inv = core.invoke(fid("f"), r#"{"name":"v"}"#.into(), None).await.unwrap();
        assert_eq!(inv.outcome, InvocationOutcome::Ok { payload: r#"{"name":"v"}"#.into() });
        seen.insert(inv.worker_id.unwrap());
    }
    for w in &c.workers {
        assert_eq!(counter(w, "nocode_total"), 0);
    }
    assert!(!seen.is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn no_worker_has_room() {
    let c = Cluster::start(1).await;
    c.core.core.create_function(fid("huge"), fl_guests::HELLO.to_vec(), 4096).await.unwrap();
    let out = invoke(&c, "huge", "{}").await;
    assert_eq!(out.platform_kind(), Some(PlatformErrorKind::NoWorkerAvailable));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn cold_path_after_cache_flush() {
    let c = Cluster::start(1).await;
    let core = &c.core.core;
    core.create_function(fid("hello"), fl_guests::HELLO.to_vec(), 64).await.unwrap();
    wait_until("broadcast compile", || c.workers[0].service.is_cached(&fid("hello"))).await;
    let warm = invoke(&c, "hello", r#"{"name":"edge"}"#).await;
    c.workers[0].service.flush_cache();
    let cold = invoke(&c, "hello", r#"{"name":"edge"}"#).await;
    let again = invoke(&c, "hello", r#"{"name":"edge"}"#).await;
    assert_eq!(warm, cold);
    assert_eq!(cold, again);
    assert_eq!(counter(&c.workers[0], "nocode_total"), 1);
    assert_eq!(core.counters_snapshot()["nocode_total"], 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn deadline_and_worker_loss() {
    let c = Cluster::start(1).await;
    let core = c.core.core.clone();
    core.create_function(fid("sleep"), fl_guests::SLEEP.to_vec(), 16).await.unwrap();
    let inv = core.invoke(fid("sleep"), "{}".into(), Some(Duration::from_millis(1000))).await.unwrap();
    assert_eq!(inv.outcome.platform_kind(), Some(PlatformErrorKind::Timeout));

    let pending = {
        let core = core.clone();
        tokio::spawn(async move { core.invoke(fid("sleep"), "{}".into(), None).await.unwrap() })
    };
    wait_until("dispatch", || core.pending_invocations() == 1).await;
    c.workers[0].drop_session().await;
    let inv = pending.await.unwrap();
    assert_eq!(inv.outcome.platform_kind(), Some(PlatformErrorKind::WorkerLost));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unicast_discovery() {
    let core = fl_core::launch(&CoreConfig {
        discovery_listen: Some("127.0.0.1:0".parse().unwrap()),
        ..core_config(vec![])
    })
    .await
    .unwrap();
    let started = Instant::now();
    let worker = fl_worker::launch(&WorkerConfig {
        core_address: Some(core.discovery_addr.unwrap().to_string()),
        ..worker_config()
    })
    .await
    .unwrap();
    let handle = core.core.clone();
    wait_until("discovery", || handle.workers().iter().any(|w| w.worker_id == worker.announce.worker_id && w.live)).await;
    // Two announce periods plus connection setup.
    assert!(started.elapsed() < Duration::from_millis(2 * 200 + 1000), "{:?}", started.elapsed());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn dropped_connection_is_redialed() {
    let c = Cluster::start(1).await;
    let id = c.workers[0].announce.worker_id;
    let epoch = c.workers[0].announce.epoch;
    c.workers[0].drop_session().await;
    let core = c.core.core.clone();
    wait_until("redial", || core.workers().iter().any(|w| w.worker_id == id && w.live)).await;
    assert!(core.workers().iter().all(|w| w.epoch >= epoch));
    assert_eq!(core.connected_workers(), 1);
}

fn http(c: &Cluster) -> (ureq::Agent, String) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    (agent, c.url(""))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn rest_api() {
    let c = Arc::new(Cluster::start(1).await);
    let c2 = c.clone();
    tokio::task::spawn_blocking(move || {
        let c = c2;
        let (agent, base) = http(&c);
        let auth = format!("Bearer {TOKEN}");

        let r = agent.post(format!("{base}/v1/fn/bench/hello")).send(fl_guests::HELLO).unwrap();
        assert_eq!(r.status(), 401);

        let mut r = agent
            .post(format!("{base}/v1/fn/bench/hello?memory_mb=64"))
            .header("authorization", &auth)
            .header("content-type", "application/wasm")
            .send(fl_guests::HELLO)
            .unwrap();
        assert_eq!(r.status(), 201);
        let meta: Value = serde_json::from_str(&r.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(meta["id"], "bench/hello");
        assert_eq!(meta["reserved_memory_mb"], 64);

        let r = agent
            .post(format!("{base}/v1/fn/bench/hello"))
            .header("authorization", &auth)
            .send(fl_guests::HELLO)
            .unwrap();
        assert_eq!(r.status(), 409);

        let r = agent.post(format!("{base}/v1/fn/bench/bad")).header("authorization", &auth).send("hello").unwrap();
        assert_eq!(r.status(), 400);

        let mut r = agent
            .post(format!("{base}/v1/invoke/bench/hello"))
            .header("authorization", &auth)
            .send(r#"{"name":"x"}"#)
            .unwrap();
        assert_eq!(r.status(), 200);
        assert!(r.headers().contains_key("x-fl-correlation-id"));
        let body: Value = serde_json::from_str(&r.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(body, json!({"status": "ok", "payload": "Hello x"}));

        let mut r = agent
            .post(format!("{base}/v1/invoke/bench/hello"))
            .header("authorization", &auth)
            .send(r#"{"name":5}"#)
            .unwrap();
        assert_eq!(r.status(), 200);
        let body: Value = serde_json::from_str(&r.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(body["status"], "error");
        assert_eq!(body["kind"], "FunctionError");

        let r = agent.post(format!("{base}/v1/invoke/bench/missing")).header("authorization", &auth).send("{}").unwrap();
        assert_eq!(r.status(), 404);

        let r = agent.post(format!("{base}/v1/invoke/bench/hello")).header("authorization", &auth).send("not-json").unwrap();
        assert_eq!(r.status(), 400);

        let mut r = agent.get(format!("{base}/v1/fn")).header("authorization", &auth).call().unwrap();
        let list: Value = serde_json::from_str(&r.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(list.as_array().unwrap().len(), 1);

        let mut r = agent.get(format!("{base}/v1/admin/workers")).header("authorization", &auth).call().unwrap();
        let workers: Value = serde_json::from_str(&r.body_mut().read_to_string().unwrap()).unwrap();
        assert_eq!(workers.as_array().unwrap().len(), 1);
        assert_eq!(workers[0]["live"], true);

        let r = agent.delete(format!("{base}/v1/fn/bench/hello")).header("authorization", &auth).call().unwrap();
        assert_eq!(r.status(), 204);
        let r = agent.get(format!("{base}/v1/fn/bench/hello")).header("authorization", &auth).call().unwrap();
        assert_eq!(r.status(), 404);
    })
    .await
    .unwrap();
}
