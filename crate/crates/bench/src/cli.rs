//! `flbench` command line.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use fl_protocol::FunctionId;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use crate::cdf::{emit_cdf, percentile};
use crate::echo::EchoServer;
use crate::memory::{resolve, sample_memory};
use crate::plan::{run_plan, LoadPlan, Mode, Target};
use crate::proxy::FaultProxy;
use crate::BenchError;

#[derive(Debug, Parser)]
#[command(name = "flbench", version, about = "Load generation and measurement for the platform")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bench {
    Hello,
    Sleep,
    ServerReply,
    Network,
    Matrixmult,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a benchmark and write latency CSVs.
    Run {
        #[arg(long, value_enum)]
        bench: Bench,
        /// Concurrent clients (default depends on the benchmark).
        #[arg(long)]
        threads: Option<usize>,
        /// Sequential requests per client (default depends on the benchmark).
        #[arg(long)]
        requests: Option<usize>,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long, env = "FL_CORE_URL", default_value = "http://127.0.0.1:8080")]
        core_url: String,
        #[arg(long, env = "FL_TOKEN", hide_env_values = true)]
        token: Option<String>,
        /// HTTP target for the network benchmarks; a local echo server is
        /// started when omitted.
        #[arg(long)]
        target_url: Option<String>,
        /// Do not upload the bundled guest before running.
        #[arg(long)]
        no_upload: bool,
    },
    /// Sample resident memory of processes once per second.
    Memsample {
        /// Pids or process names.
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        procs: Vec<String>,
        /// Seconds.
        #[arg(long, default_value_t = 300)]
        duration: u64,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the echo target until interrupted.
    Echo {
        #[arg(long, default_value = "127.0.0.1:8090")]
        bind: SocketAddr,
    },
    /// Proxy a worker connection, dropping a fraction of frames.
    Proxy {
        #[arg(long)]
        listen: SocketAddr,
        #[arg(long)]
        upstream: String,
        #[arg(long, default_value_t = 0.2)]
        drop_rate: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

pub struct BenchSpec {
    pub function: &'static str,
    pub wasm: &'static [u8],
    pub memory_mb: u32,
    pub threads: usize,
    pub requests: usize,
    pub mode: Mode,
}

/// Load shapes: sleep 4x25, network 1x50, the rest 4x200.
pub fn spec(bench: Bench) -> BenchSpec {
    let (function, wasm, threads, requests, mode) = match bench {
        Bench::Hello => ("hello", fl_guests::HELLO, 4, 200, Mode::Parallel),
        Bench::Sleep => ("sleep", fl_guests::SLEEP, 4, 25, Mode::Parallel),
        Bench::ServerReply => ("server_reply", fl_guests::SERVER_REPLY, 4, 200, Mode::Parallel),
        Bench::Network => ("network", fl_guests::NETWORK, 1, 50, Mode::SingleThread),
        Bench::Matrixmult => ("matrix_mult", fl_guests::MATRIX_MULT, 4, 200, Mode::Parallel),
    };
    BenchSpec { function, wasm, memory_mb: 64, threads, requests, mode }
}

/// Random n×n matrix with small integer entries.
pub fn random_matrix(rng: &mut impl Rng, n: usize) -> Vec<Vec<i64>> {
    (0..n).map(|_| (0..n).map(|_| rng.random_range(-100..=100)).collect()).collect()
}

fn bench_args(bench: Bench, target_url: &str) -> String {
    match bench {
        Bench::Hello => json!({"name": "bench"}),
        Bench::Sleep => json!({}),
        Bench::ServerReply => json!({"target_url": target_url, "message": "ping"}),
        Bench::Network => json!({"target_url": target_url, "count": 16}),
        Bench::Matrixmult => {
            let mut rng = StdRng::seed_from_u64(100);
            json!({"a": random_matrix(&mut rng, 100), "b": random_matrix(&mut rng, 100)})
        }
    }
    .to_string()
}

/// Uploads a guest; an existing function with that id is left alone.
pub fn upload(target: &Target, id: &FunctionId, wasm: &[u8], memory_mb: u32) -> Result<(), BenchError> {
    let url = format!("{}/v1/fn/{}/{}?memory_mb={memory_mb}", target.core_url, id.module(), id.name());
    let mut req = target.agent().post(&url).header("content-type", "application/wasm");
    if let Some(auth) = target.auth() {
        req = req.header("authorization", &auth);
    }
    let resp = req.send(wasm).map_err(|e| BenchError::CoreUnreachable(e.to_string()))?;
    match resp.status().as_u16() {
        201 | 409 => Ok(()),
        s => Err(BenchError::Rejected(format!("upload of {id} answered {s}"))),
    }
}

fn write(path: &Path, text: &str) -> Result<(), BenchError> {
    fs::write(path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}

/// Runs `flbench` with the given arguments; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("flbench: {e}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run { bench, threads, requests, out, repeat, core_url, token, target_url, no_upload } => {
            let spec = spec(bench);
            let target = Target::new(core_url, token);
            let id = FunctionId::new("bench", spec.function).expect("valid id");
            if !no_upload {
                upload(&target, &id, spec.wasm, spec.memory_mb)?;
            }
            let _echo;
            let target_url = match target_url {
                Some(u) => u,
                None => {
                    let server = EchoServer::start("127.0.0.1:0".parse().unwrap()).map_err(|e| BenchError::Io(e.to_string()))?;
                    let url = server.url();
                    _echo = server;
                    url
                }
            };
            let threads = threads.unwrap_or(spec.threads);
            let mode = if threads == 1 { Mode::SingleThread } else { spec.mode };
            let plan = LoadPlan {
                function_id: id,
                args: bench_args(bench, &target_url),
                threads,
                requests_per_thread: requests.unwrap_or(spec.requests),
                mode,
            };
            let dir = out.join(spec.function);
            fs::create_dir_all(&dir).map_err(|e| BenchError::Io(format!("{}: {e}", dir.display())))?;
            let mut summary = Vec::new();
            for k in 1..=repeat.max(1) {
                let records = run_plan(&target, &plan)?;
                write(&dir.join(format!("run-{k}.csv")), &crate::plan::records_csv(&records))?;
                match emit_cdf(&records) {
                    Ok(csv) => write(&dir.join(format!("run-{k}-cdf.csv")), &csv)?,
                    Err(BenchError::EmptyInput) => eprintln!("run {k}: every request failed"),
                    Err(e) => return Err(e),
                }
                let failures = records.iter().filter(|r| !r.ok).count();
                let p50 = percentile(&records, 50.0);
                let p95 = percentile(&records, 95.0);
                println!(
                    "{} run {k}/{}: {} requests, {failures} failed, p50 {} ms, p95 {} ms",
                    spec.function,
                    repeat.max(1),
                    records.len(),
                    p50.map_or("-".into(), |v| format!("{v:.1}")),
                    p95.map_or("-".into(), |v| format!("{v:.1}")),
                );
                summary.push(json!({"run": k, "requests": records.len(), "failures": failures, "p50_ms": p50, "p95_ms": p95}));
            }
            write(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).unwrap())
        }
        Command::Memsample { procs, duration, out } => {
            let mut targets = Vec::new();
            for p in &procs {
                targets.extend(resolve(p)?);
            }
            let report = sample_memory(&targets, duration, Duration::from_secs(1))?;
            let csv = report.to_csv();
            match out {
                Some(path) => write(&path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Echo { bind } => {
            let server = EchoServer::start(bind).map_err(|e| BenchError::Io(e.to_string()))?;
            println!("echo server listening on {}", server.addr);
            loop {
                std::thread::park();
            }
        }
        Command::Proxy { listen, upstream, drop_rate, seed } => {
            if !(0.0..=1.0).contains(&drop_rate) {
                return Err(BenchError::InvalidPlan("drop rate must be within [0, 1]".into()));
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| BenchError::Io(e.to_string()))?;
            rt.block_on(async {
                let proxy = FaultProxy::start(listen, upstream, drop_rate, seed)
                    .await
                    .map_err(|e| BenchError::Io(e.to_string()))?;
                println!("proxy listening on {}", proxy.addr);
                let _ = tokio::signal::ctrl_c().await;
                println!("forwarded {} frames, dropped {}", proxy.forwarded(), proxy.dropped());
                Ok(())
            })
        }
    }
}
