//! Closed-loop load generation against the Core REST API.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use fl_protocol::{now_ms, FunctionId};
use serde::Serialize;
use serde_json::Value;

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Parallel,
    SingleThread,
}

#[derive(Debug, Clone)]
pub struct LoadPlan {
    pub function_id: FunctionId,
    pub args: String,
    pub threads: usize,
    pub requests_per_thread: usize,
    pub mode: Mode,
}

impl LoadPlan {
    pub fn total(&self) -> usize {
        self.threads * self.requests_per_thread
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRecord {
    pub thread: usize,
    pub seq: usize,
    /// Correlation id reported by the Core, when there was one.
    pub tag: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub latency_ms: f64,
    pub ok: bool,
    /// `ok`, the error kind reported by the Core, or `transport`.
    pub outcome: String,
    /// Payload JSON text of successful calls.
    pub payload: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Target {
    pub core_url: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl Target {
    pub fn new(core_url: impl Into<String>, token: Option<String>) -> Self {
        Target { core_url: core_url.into().trim_end_matches('/').to_string(), token, timeout: Duration::from_secs(120) }
    }

    pub(crate) fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(self.timeout))
            .build()
            .into()
    }

    pub(crate) fn auth(&self) -> Option<String> {
        self.token.as_ref().map(|t| format!("Bearer {t}"))
    }
}

/// Outcome of one invoke call over HTTP.
#[derive(Debug, Clone, PartialEq)]
pub struct CallResult {
    pub status: u16,
    pub ok: bool,
    pub kind: String,
    pub payload: Option<String>,
    pub correlation_id: Option<String>,
}

/// Sends one invocation and classifies the answer.
pub fn invoke_once(agent: &ureq::Agent, target: &Target, id: &FunctionId, args: &str) -> CallResult {
    let url = format!("{}/v1/invoke/{}/{}", target.core_url, id.module(), id.name());
    let mut req = agent.post(&url).header("content-type", "application/json");
    if let Some(auth) = target.auth() {
        req = req.header("authorization", &auth);
    }
    let mut resp = match req.send(args) {
        Ok(r) => r,
        Err(e) => {
            return CallResult { status: 0, ok: false, kind: format!("transport: {e}"), payload: None, correlation_id: None }
        }
    };
    let status = resp.status().as_u16();
    let correlation_id = resp
        .headers()
        .get("x-fl-correlation-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let body = resp.body_mut().read_to_string().unwrap_or_default();
    let parsed: Option<Value> = serde_json::from_str(&body).ok();
    let status_field = parsed.as_ref().and_then(|v| v.get("status")).and_then(Value::as_str);
    if status == 200 && status_field == Some("ok") {
        let payload = parsed.as_ref().and_then(|v| v.get("payload")).map(|p| p.to_string());
        return CallResult { status, ok: true, kind: "ok".into(), payload, correlation_id };
    }
    let kind = parsed
        .as_ref()
        .and_then(|v| v.get("kind"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("http-{status}"));
    CallResult { status, ok: false, kind, payload: None, correlation_id }
}

/// Fails fast when nothing answers at the Core URL.
pub fn check_reachable(target: &Target) -> Result<(), BenchError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(5)))
        .build()
        .into();
    agent
        .get(format!("{}/v1/fn", target.core_url))
        .call()
        .map(|_| ())
        .map_err(|e| BenchError::CoreUnreachable(format!("{}: {e}", target.core_url)))
}

/// Runs the plan: `threads` concurrent clients, each issuing its requests
/// strictly one after another. Every attempt yields a record.
pub fn run_plan(target: &Target, plan: &LoadPlan) -> Result<Vec<LatencyRecord>, BenchError> {
    if plan.threads == 0 || plan.requests_per_thread == 0 {
        return Err(BenchError::InvalidPlan("threads and requests must be positive".into()));
    }
    if plan.mode == Mode::SingleThread && plan.threads != 1 {
        return Err(BenchError::InvalidPlan("single_thread mode needs exactly one thread".into()));
    }
    check_reachable(target)?;
    let plan = Arc::new(plan.clone());
    let handles: Vec<_> = (0..plan.threads)
        .map(|thread| {
            let plan = plan.clone();
            let target = target.clone();
            thread::spawn(move || {
                let agent = target.agent();
                let mut records = Vec::with_capacity(plan.requests_per_thread);
                for seq in 0..plan.requests_per_thread {
                    let start_ms = now_ms();
                    let start = Instant::now();
                    let r = invoke_once(&agent, &target, &plan.function_id, &plan.args);
                    let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
                    let end_ms = now_ms().max(start_ms);
                    records.push(LatencyRecord {
                        thread,
                        seq,
                        tag: r.correlation_id.unwrap_or_default(),
                        start_ms,
                        end_ms,
                        latency_ms,
                        ok: r.ok,
                        outcome: r.kind,
                        payload: r.payload,
                    });
                }
                records
            })
        })
        .collect();
    let mut all = Vec::with_capacity(plan.total());
    for h in handles {
        all.extend(h.join().map_err(|_| BenchError::InvalidPlan("load thread panicked".into()))?);
    }
    Ok(all)
}

/// Raw records as CSV.
pub fn records_csv(records: &[LatencyRecord]) -> String {
    let mut out = String::from("thread,seq,correlation_id,start_ms,end_ms,latency_ms,outcome\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3},{}\n",
            r.thread,
            r.seq,
            r.tag,
            r.start_ms,
            r.end_ms,
            r.latency_ms,
            r.outcome.replace([',', '\n'], " ")
        ));
    }
    out
}
