//! Empirical cumulative distribution output.

use std::fmt::Write;

use crate::plan::LatencyRecord;
use crate::BenchError;

/// CSV of `latency_ms,cumulative_fraction` over successful records, sorted
/// ascending, followed by a comment line counting failures.
pub fn emit_cdf(records: &[LatencyRecord]) -> Result<String, BenchError> {
    let mut latencies: Vec<f64> = records.iter().filter(|r| r.ok).map(|r| r.latency_ms).collect();
    if latencies.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    latencies.sort_by(f64::total_cmp);
    let n = latencies.len();
    let mut out = String::from("latency_ms,cumulative_fraction\n");
    for (i, l) in latencies.iter().enumerate() {
        let fraction = if i + 1 == n { 1.0 } else { (i + 1) as f64 / n as f64 };
        writeln!(out, "{l:.3},{fraction:.6}").unwrap();
    }
    writeln!(out, "# failures: {} of {}", records.len() - n, records.len()).unwrap();
    Ok(out)
}

/// Nearest-rank percentile of successful latencies, `p` in (0, 100].
pub fn percentile(records: &[LatencyRecord], p: f64) -> Option<f64> {
    let mut l: Vec<f64> = records.iter().filter(|r| r.ok).map(|r| r.latency_ms).collect();
    if l.is_empty() {
        return None;
    }
    l.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * l.len() as f64).ceil().max(1.0) as usize;
    Some(l[rank.min(l.len()) - 1])
}
