//! Resident-set sampling of running processes through /proc.

use std::fs;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Process {
    pub pid: u32,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemorySample {
    /// Seconds since sampling started.
    pub t: u64,
    pub pid: u32,
    pub rss_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub std_dev: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub processes: Vec<Process>,
    pub samples: Vec<MemorySample>,
}

/// Current resident set of `pid` in bytes.
pub fn rss_bytes(pid: u32) -> Result<u64, BenchError> {
    let status =
        fs::read_to_string(format!("/proc/{pid}/status")).map_err(|_| BenchError::UnknownProcess(pid.to_string()))?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmRSS:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        .map(|kb| kb * 1024)
        .ok_or_else(|| BenchError::UnknownProcess(format!("{pid} (no resident set)")))
}

fn process_name(pid: u32) -> Option<String> {
    fs::read_to_string(format!("/proc/{pid}/comm")).ok().map(|s| s.trim().to_string())
}

/// Resolves a pid or a process name (every process whose name matches).
pub fn resolve(spec: &str) -> Result<Vec<Process>, BenchError> {
    if let Ok(pid) = spec.parse::<u32>() {
        let name = process_name(pid).ok_or_else(|| BenchError::UnknownProcess(spec.to_string()))?;
        return Ok(vec![Process { pid, name }]);
    }
    let mut found = Vec::new();
    let entries = fs::read_dir("/proc").map_err(|e| BenchError::Io(e.to_string()))?;
    for entry in entries.flatten() {
        let Some(pid) = entry.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) else { continue };
        if process_name(pid).as_deref() == Some(spec) {
            found.push(Process { pid, name: spec.to_string() });
        }
    }
    if found.is_empty() {
        return Err(BenchError::UnknownProcess(spec.to_string()));
    }
    found.sort_by_key(|p| p.pid);
    Ok(found)
}

/// Samples every process once per `interval` for `count` ticks on a fixed
/// schedule. Processes that exit stop contributing rows.
pub fn sample_memory(processes: &[Process], count: u64, interval: Duration) -> Result<MemoryReport, BenchError> {
    for p in processes {
        rss_bytes(p.pid)?;
    }
    let start = Instant::now();
    let mut samples = Vec::new();
    for tick in 0..count {
        let due = interval * tick as u32;
        if let Some(wait) = due.checked_sub(start.elapsed()) {
            thread::sleep(wait);
        }
        for p in processes {
            if let Ok(rss) = rss_bytes(p.pid) {
                samples.push(MemorySample { t: (due.as_millis() / 1000) as u64, pid: p.pid, rss_bytes: rss });
            }
        }
    }
    Ok(MemoryReport { processes: processes.to_vec(), samples })
}

/// Population mean and standard deviation.
pub fn stats(values: &[u64]) -> Option<Stats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    Some(Stats { mean, std_dev: var.sqrt(), samples: values.len() })
}

impl MemoryReport {
    pub fn series(&self, pid: u32) -> Vec<u64> {
        self.samples.iter().filter(|s| s.pid == pid).map(|s| s.rss_bytes).collect()
    }

    pub fn stats(&self, pid: u32) -> Option<Stats> {
        stats(&self.series(pid))
    }

    /// Mean RSS of `pid` over samples with `from <= t < to` seconds.
    pub fn window_mean(&self, pid: u32, from: u64, to: u64) -> Option<f64> {
        let v: Vec<u64> =
            self.samples.iter().filter(|s| s.pid == pid && s.t >= from && s.t < to).map(|s| s.rss_bytes).collect();
        stats(&v).map(|s| s.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,pid,name,rss_bytes\n");
        for s in &self.samples {
            let name = self.processes.iter().find(|p| p.pid == s.pid).map_or("", |p| p.name.as_str());
            out.push_str(&format!("{},{},{},{}\n", s.t, s.pid, name, s.rss_bytes));
        }
        for p in &self.processes {
            if let Some(st) = self.stats(p.pid) {
                out.push_str(&format!(
                    "# {} {}: mean_bytes={:.0} std_dev_bytes={:.0} samples={}\n",
                    p.pid, p.name, st.mean, st.std_dev, st.samples
                ));
            }
        }
        out
    }
}
