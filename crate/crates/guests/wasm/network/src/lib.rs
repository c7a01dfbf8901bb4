use std::time::{Instant, SystemTime, UNIX_EPOCH};

use fl_guest_sdk::{entry, http, json, Value};

entry!(network_benchmark);

fn network_benchmark(args: Value) -> Result<Value, String> {
    let url = args.get("target_url").and_then(Value::as_str).ok_or("target_url is required")?;
    let count = match args.get("count") {
        None => 16,
        Some(v) => v.as_u64().ok_or("count must be a non-negative integer")?,
    };
    let mut durations = Vec::with_capacity(count as usize);
    for i in 0..count {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0)
            .to_string();
        let start = Instant::now();
        let resp = http("GET", url, &[("x-client-timestamp", &stamp)], &[], 10_000)
            .map_err(|e| format!("request {i}: {e}"))?;
        let elapsed = start.elapsed().as_secs_f64() * 1000.0;
        if resp.status_code >= 400 {
            return Err(format!("request {i}: status {}", resp.status_code));
        }
        durations.push(elapsed);
    }
    Ok(json!({ "durations_ms": durations }))
}
