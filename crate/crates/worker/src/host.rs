//! Host-side HTTP shim that guests reach through `funless.fl_http`.
//!
//! Request and response are JSON documents:
//!
//! ```text
//! {"method", "url", "headers": {..}, "body": <base64>, "timeout_ms"}
//! {"status_code", "headers": {..}, "body": <base64>}  |  {"error": <message>}
//! ```

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Map, Value};

const DEFAULT_TIMEOUT_MS: u64 = 30_000;
const MAX_RESPONSE_BYTES: u64 = 8 << 20;

/// Hosts guests may contact. Patterns: `*` (anything), `example.com`
/// (exact) or `*.example.com` (the domain and its subdomains).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allowlist(Vec<String>);

impl Allowlist {
    pub fn new<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Allowlist(patterns.into_iter().map(|p| p.into().to_ascii_lowercase()).collect())
    }

    pub fn allow_all() -> Self {
        Allowlist::new(["*"])
    }

    pub fn permits(&self, host: &str) -> bool {
        let host = host.trim_start_matches('[').trim_end_matches(']').to_ascii_lowercase();
        self.0.iter().any(|p| {
            if p == "*" {
                true
            } else if let Some(domain) = p.strip_prefix("*.") {
                host == domain || host.ends_with(&format!(".{domain}"))
            } else {
                *p == host
            }
        })
    }
}

impl Default for Allowlist {
    fn default() -> Self {
        Allowlist::allow_all()
    }
}

#[derive(Debug, Deserialize)]
struct HttpRequest {
    #[serde(default = "default_method")]
    method: String,
    url: String,
    #[serde(default)]
    headers: Map<String, Value>,
    #[serde(default)]
    body: String,
    timeout_ms: Option<u64>,
}

fn default_method() -> String {
    "GET".into()
}

fn error(msg: impl Into<String>) -> Value {
    json!({ "error": msg.into() })
}

/// Performs one HTTP exchange on behalf of a guest. `budget` caps the
/// exchange to whatever remains of the invocation deadline.
pub fn host_http(request: &[u8], allowlist: &Allowlist, budget: Option<Duration>) -> Value {
    let req: HttpRequest = match serde_json::from_slice(request) {
        Ok(r) => r,
        Err(e) => return error(format!("bad request: {e}")),
    };
    let uri: ureq::http::Uri = match req.url.parse() {
        Ok(u) => u,
        Err(e) => return error(format!("bad url: {e}")),
    };
    let Some(host) = uri.host() else { return error("bad url: missing host") };
    if !allowlist.permits(host) {
        return error("denied");
    }
    let body = match B64.decode(req.body.as_bytes()) {
        Ok(b) => b,
        Err(e) => return error(format!("bad body encoding: {e}")),
    };

    let mut timeout = Duration::from_millis(req.timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS));
    if let Some(budget) = budget {
        timeout = timeout.min(budget);
    }
    if timeout.is_zero() {
        return error("timeout");
    }

    let mut builder = ureq::http::Request::builder().method(req.method.as_str()).uri(uri);
    for (k, v) in &req.headers {
        match v {
            Value::String(s) => builder = builder.header(k.as_str(), s.as_str()),
            other => builder = builder.header(k.as_str(), other.to_string()),
        }
    }
    let request = match builder.body(body) {
        Ok(r) => r,
        Err(e) => return error(format!("bad request: {e}")),
    };

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .max_redirects(0)
        .build()
        .into();
    let mut resp = match agent.run(request) {
        Ok(r) => r,
        Err(e) => return error(classify(&e)),
    };
    let mut headers = Map::new();
    for (k, v) in resp.headers() {
        if let Ok(v) = v.to_str() {
            headers.insert(k.as_str().to_string(), Value::from(v));
        }
    }
    let status = resp.status().as_u16();
    match resp.body_mut().with_config().limit(MAX_RESPONSE_BYTES).read_to_vec() {
        Ok(body) => json!({ "status_code": status, "headers": headers, "body": B64.encode(body) }),
        Err(e) => error(classify(&e)),
    }
}

fn classify(e: &ureq::Error) -> String {
    match e {
        ureq::Error::Timeout(_) => "timeout".into(),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => "timeout".into(),
        ureq::Error::HostNotFound => "dns: host not found".into(),
        ureq::Error::ConnectionFailed => "connect: connection failed".into(),
        ureq::Error::Io(io) => format!("io: {io}"),
        other => other.to_string(),
    }
}
