//! `fl`, the command-line client for the Core.
//!
//! Exit codes: 0 success, 1 request rejected or platform error, 2 usage or
//! local I/O error, 3 the function itself reported an error.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::CliConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FUNCTION_ERROR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fl", version, about = "Manage and invoke functions on a Core")]
pub struct Cli {
    /// Core base URL.
    #[arg(long, env = "FL_CORE_URL", global = true)]
    core_url: Option<String>,
    /// Bearer token.
    #[arg(long, env = "FL_TOKEN", global = true, hide_env_values = true)]
    token: Option<String>,
    /// Config file (default: $FL_CONFIG or ~/.config/fl/cli.toml).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Upload a new function.
    Upload(UploadArgs),
    /// Replace the binary of an existing function.
    Update(UploadArgs),
    /// Delete a function.
    Delete(FnRef),
    /// Show function metadata.
    Get(FnRef),
    /// List functions.
    List,
    /// Invoke a function.
    Invoke(InvokeArgs),
    /// Show the worker registry.
    Workers,
    /// Ask the Core to connect to a worker.
    Connect { address: String },
}

#[derive(Debug, Args)]
struct FnRef {
    module: String,
    name: String,
}

#[derive(Debug, Args)]
struct UploadArgs {
    module: String,
    name: String,
    wasm: PathBuf,
    /// Memory reserved per invocation.
    #[arg(long)]
    memory_mb: Option<u32>,
}

#[derive(Debug, Args)]
struct InvokeArgs {
    module: String,
    name: String,
    /// JSON arguments, or @path to read them from a file.
    #[arg(default_value = "{}")]
    args: String,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    fn failed(message: impl Into<String>) -> Self {
        Failure { code: EXIT_FAILED, message: message.into() }
    }
}

type Outcome = Result<(), Failure>;

struct Client {
    agent: ureq::Agent,
    cfg: CliConfig,
}

struct Reply {
    status: u16,
    body: String,
}

impl Reply {
    fn json(&self) -> Result<Value, Failure> {
        serde_json::from_str(&self.body).map_err(|e| Failure::failed(format!("unexpected response from core: {e}")))
    }

    /// Turns a non-success status into a failure carrying the server message.
    fn check(self) -> Result<Self, Failure> {
        if (200..300).contains(&self.status) {
            return Ok(self);
        }
        let detail = serde_json::from_str::<Value>(&self.body)
            .ok()
            .and_then(|v| v.get("message").and_then(Value::as_str).map(str::to_string))
            .unwrap_or_else(|| self.body.clone());
        Err(Failure::failed(format!("error {}: {detail}", self.status)))
    }
}

impl Client {
    fn new(cfg: CliConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(5)))
            .build()
            .into();
        Client { agent, cfg }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.core_url, path)
    }

    fn send(
        &self,
        method: &str,
        path: &str,
        body: Option<(&str, Vec<u8>)>,
        extra: &[(&str, String)],
    ) -> Result<Reply, Failure> {
        let mut req = ureq::http::Request::builder().method(method).uri(self.url(path));
        if let Some(token) = &self.cfg.token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        for (k, v) in extra {
            req = req.header(*k, v);
        }
        let (content_type, bytes) = body.unwrap_or(("application/json", Vec::new()));
        req = req.header("content-type", content_type);
        let req = req.body(bytes).map_err(|e| Failure::usage(e.to_string()))?;
        let mut resp = self
            .agent
            .run(req)
            .map_err(|e| Failure::failed(format!("cannot reach core at {}: {e}", self.cfg.core_url)))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| Failure::failed(e.to_string()))?;
        Ok(Reply { status, body })
    }
}

/// Runs the CLI with explicit arguments and output streams; returns the
/// exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "{}", f.message);
            f.code
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Outcome {
    let file = match cli.config.as_deref() {
        Some(p) => config::load_file(p, true),
        None => match config::default_config_path() {
            Some(p) => config::load_file(&p, false),
            None => Ok(Default::default()),
        },
    }
    .map_err(Failure::usage)?;
    let cfg = config::resolve(cli.core_url, cli.token, None, file).map_err(Failure::usage)?;
    let client = Client::new(cfg);
    let json_out = cli.json;
    let emit = |out: &mut dyn Write, text: String| -> Outcome {
        writeln!(out, "{text}").map_err(|e| Failure::usage(e.to_string()))
    };

    match cli.command {
        Command::Upload(a) => upload(&client, out, a, "POST", json_out),
        Command::Update(a) => upload(&client, out, a, "PUT", json_out),
        Command::Delete(f) => {
            client.send("DELETE", &fn_path(&f.module, &f.name), None, &[])?.check()?;
            if json_out {
                emit(out, json!({"deleted": format!("{}/{}", f.module, f.name)}).to_string())
            } else {
                emit(out, format!("deleted {}/{}", f.module, f.name))
            }
        }
        Command::Get(f) => {
            let v = client.send("GET", &fn_path(&f.module, &f.name), None, &[])?.check()?.json()?;
            emit(out, render_json(&v, json_out))
        }
        Command::List => {
            let v = client.send("GET", "/v1/fn", None, &[])?.check()?.json()?;
            if json_out {
                return emit(out, v.to_string());
            }
            let rows: Vec<Vec<String>> = v
                .as_array()
                .into_iter()
                .flatten()
                .map(|r| vec![field(r, "id")])
                .collect();
            emit(out, table(&["ID"], &rows))
        }
        Command::Workers => {
            let v = client.send("GET", "/v1/admin/workers", None, &[])?.check()?.json()?;
            if json_out {
                return emit(out, v.to_string());
            }
            let rows: Vec<Vec<String>> = v
                .as_array()
                .into_iter()
                .flatten()
                .map(|w| {
                    ["worker_id", "address", "capacity_mb", "free_memory_mb", "effective_free_mb", "in_flight", "live"]
                        .iter()
                        .map(|k| field(w, k))
                        .collect()
                })
                .collect();
            emit(out, table(&["WORKER", "ADDRESS", "CAPACITY_MB", "FREE_MB", "EFFECTIVE_MB", "IN_FLIGHT", "LIVE"], &rows))
        }
        Command::Connect { address } => {
            let body = json!({"address": address}).to_string().into_bytes();
            let v = client.send("POST", "/v1/admin/connect", Some(("application/json", body)), &[])?.check()?.json()?;
            if json_out {
                emit(out, v.to_string())
            } else {
                emit(out, format!("connected {} at {}", field(&v, "worker_id"), address))
            }
        }
        Command::Invoke(a) => invoke(&client, out, a, json_out),
    }
}

fn fn_path(module: &str, name: &str) -> String {
    format!("/v1/fn/{module}/{name}")
}

fn upload(client: &Client, out: &mut dyn Write, a: UploadArgs, method: &str, json_out: bool) -> Outcome {
    let wasm = fs::read(&a.wasm).map_err(|e| Failure::usage(format!("{}: {e}", a.wasm.display())))?;
    let mut path = fn_path(&a.module, &a.name);
    if let Some(mb) = a.memory_mb {
        path.push_str(&format!("?memory_mb={mb}"));
    }
    let v = client.send(method, &path, Some(("application/wasm", wasm)), &[])?.check()?.json()?;
    writeln!(out, "{}", render_json(&v, json_out)).map_err(|e| Failure::usage(e.to_string()))
}

fn invoke(client: &Client, out: &mut dyn Write, a: InvokeArgs, json_out: bool) -> Outcome {
    let args = match a.args.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).map_err(|e| Failure::usage(format!("{path}: {e}")))?,
        None => a.args,
    };
    if let Err(e) = serde_json::from_str::<Value>(&args) {
        return Err(Failure::usage(format!("arguments are not valid JSON: {e}")));
    }
    let mut extra = Vec::new();
    if let Some(ms) = a.timeout_ms.or(client.cfg.default_timeout_ms) {
        extra.push(("x-fl-timeout-ms", ms.to_string()));
    }
    let reply = client.send(
        "POST",
        &format!("/v1/invoke/{}/{}", a.module, a.name),
        Some(("application/json", args.into_bytes())),
        &extra,
    )?;
    let v: Value = match serde_json::from_str(&reply.body) {
        Ok(v) => v,
        Err(_) => return reply.check().map(|_| ()),
    };
    if json_out {
        writeln!(out, "{v}").map_err(|e| Failure::usage(e.to_string()))?;
    }
    match v.get("status").and_then(Value::as_str) {
        Some("ok") if (200..300).contains(&reply.status) => {
            if !json_out {
                let payload = v.get("payload").cloned().unwrap_or(Value::Null);
                writeln!(out, "{payload}").map_err(|e| Failure::usage(e.to_string()))?;
            }
            Ok(())
        }
        _ => {
            let kind = field(&v, "kind");
            let message = field(&v, "message");
            let code = if kind == "FunctionError" { EXIT_FUNCTION_ERROR } else { EXIT_FAILED };
            Err(Failure { code, message: format!("{kind}: {message}") })
        }
    }
}

fn field(v: &Value, key: &str) -> String {
    match v.get(key) {
        None | Some(Value::Null) => "-".into(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

fn render_json(v: &Value, compact: bool) -> String {
    if compact {
        v.to_string()
    } else {
        serde_json::to_string_pretty(v).unwrap_or_else(|_| v.to_string())
    }
}

/// Left-aligned, space-padded columns.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut lines = vec![line(header.to_vec())];
    lines.extend(rows.iter().map(|r| line(r.iter().map(String::as_str).collect())));
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns() {
        let t = table(&["A", "BB"], &[vec!["xxx".into(), "y".into()]]);
        assert_eq!(t, "A    BB\nxxx  y");
    }

    #[test]
    fn usage_errors_exit_2() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["fl", "frobnicate"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(run(["fl", "invoke", "m", "n", "not-json", "--core-url", "http://127.0.0.1:1"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(run(["fl", "upload", "m", "n", "/definitely/missing.wasm", "--core-url", "http://127.0.0.1:1"], &mut o, &mut e), EXIT_USAGE);
    }

    #[test]
    fn help_exits_0() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["fl", "--help"], &mut o, &mut e), EXIT_OK);
        assert!(String::from_utf8(o).unwrap().contains("invoke"));
    }
}
