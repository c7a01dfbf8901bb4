use std::time::{Duration, Instant};

use fl_bench::{emit_cdf, run_plan, BenchError, EchoServer, FaultProxy, LoadPlan, Mode, Target};
use fl_core::{CoreConfig, CoreHandle};
use fl_protocol::{FunctionId, PlatformErrorKind};
use fl_store::StoreConfig;
use fl_worker::{WasmtimeRuntime, WorkerConfig, WorkerHandle};

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

#[test]
fn echo_server_get_post() {
    let server = EchoServer::start("127.0.0.1:0".parse().unwrap()).unwrap();
    let mut r = agent().get(server.url()).call().unwrap();
    assert_eq!(r.status(), 200);
    assert!(r.headers().contains_key("x-server-timestamp"));
    assert_eq!(r.body_mut().read_to_string().unwrap(), "ok");
    let mut r = agent().post(server.url()).send("ping").unwrap();
    assert_eq!(r.body_mut().read_to_string().unwrap(), "ping");
}

#[test]
fn echo_server_concurrent() {
    let server = EchoServer::start("127.0.0.1:0".parse().unwrap()).unwrap();
    let url = server.url();
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let url = url.clone();
            std::thread::spawn(move || {
                let body = format!("msg-{i}");
                let mut r = agent().post(&url).send(&body).unwrap();
                assert_eq!(r.body_mut().read_to_string().unwrap(), body);
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

struct Cluster {
    rt: tokio::runtime::Runtime,
    core: Option<CoreHandle>,
    worker: Option<WorkerHandle<WasmtimeRuntime>>,
    proxy: Option<FaultProxy>,
}

impl Drop for Cluster {
    fn drop(&mut self) {
        let _g = self.rt.enter();
        self.core.take();
        self.worker.take();
        self.proxy.take();
    }
}

impl Cluster {
    fn start(drop_rate: Option<f64>) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let (core, worker, proxy) = rt.block_on(async {
            let worker = fl_worker::launch(&WorkerConfig {
                listen: "127.0.0.1:0".parse().unwrap(),
                multicast: false,
                metrics_period_ms: 200,
                ..WorkerConfig::default()
            })
            .await
            .unwrap();
            let (address, proxy) = match drop_rate {
                Some(rate) => {
                    let p = FaultProxy::start("127.0.0.1:0".parse().unwrap(), worker.listen_addr.to_string(), rate, 7)
                        .await
                        .unwrap();
                    (p.addr.to_string(), Some(p))
                }
                None => (worker.listen_addr.to_string(), None),
            };
            let core = fl_core::launch(&CoreConfig {
                http_listen: "127.0.0.1:0".parse().unwrap(),
                discovery_listen: None,
                static_workers: vec![address],
                redial_period_ms: 200,
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
            core.core.create_function(FunctionId::new("bench", "hello").unwrap(), fl_guests::HELLO.to_vec(), 64).await.unwrap();
            (core, worker, proxy)
        });
        Cluster { rt, core: Some(core), worker: Some(worker), proxy }
    }

    fn target(&self) -> Target {
        Target::new(format!("http://{}", self.core.as_ref().unwrap().http_addr), None)
    }
}

fn plan(name: &str, threads: usize, requests: usize) -> LoadPlan {
    LoadPlan {
        function_id: FunctionId::new("bench", name).unwrap(),
        args: r#"{"name":"load"}"#.into(),
        threads,
        requests_per_thread: requests,
        mode: if threads == 1 { Mode::SingleThread } else { Mode::Parallel },
    }
}

#[test]
fn plan_records_every_request() {
    let c = Cluster::start(None);
    let records = run_plan(&c.target(), &plan("hello", 3, 10)).unwrap();
    assert_eq!(records.len(), 30);
    assert!(records.iter().all(|r| r.ok && r.payload.as_deref() == Some("\"Hello load\"")));
    for t in 0..3 {
        let mine: Vec<_> = records.iter().filter(|r| r.thread == t).collect();
        assert_eq!(mine.len(), 10);
        for pair in mine.windows(2) {
            assert!(pair[0].end_ms <= pair[1].start_ms, "requests within a thread overlap");
        }
    }
    let csv = emit_cdf(&records).unwrap();
    assert!(csv.lines().rfind(|l| !l.starts_with('#')).unwrap().ends_with(",1.000000"));
}

#[test]
fn missing_function_still_measures() {
    let c = Cluster::start(None);
    let records = run_plan(&c.target(), &plan("missing", 2, 5)).unwrap();
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| !r.ok && r.outcome == PlatformErrorKind::NotFound.as_str()));
    assert!(matches!(emit_cdf(&records), Err(BenchError::EmptyInput)));
}

#[test]
fn unreachable_core_aborts() {
    let target = Target::new("http://127.0.0.1:1", None);
    assert!(matches!(run_plan(&target, &plan("hello", 1, 1)), Err(BenchError::CoreUnreachable(_))));
}

#[test]
fn lossless_proxy_is_transparent() {
    let c = Cluster::start(Some(0.0));
    let records = run_plan(&c.target(), &plan("hello", 2, 10)).unwrap();
    assert!(records.iter().all(|r| r.ok));
    let proxy = c.proxy.as_ref().unwrap();
    assert!(proxy.forwarded() > 40);
    assert_eq!(proxy.dropped(), 0);
}
