//! Worker registry: latest metrics, liveness and reservation accounting.

use std::collections::{BTreeMap, HashMap};

use fl_protocol::{CorrelationId, DiscoveryAnnounce, MetricsSample, WorkerId};
use serde::Serialize;

use crate::scheduler::{select_worker, Candidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Reservation {
    mb: u64,
    dispatched_at: u64,
}

#[derive(Debug, Clone)]
pub struct WorkerRecord {
    pub worker_id: WorkerId,
    pub address: String,
    pub capacity_mb: u32,
    pub epoch: u64,
    pub last_sample: Option<MetricsSample>,
    /// Core time of the last frame received from the worker.
    pub last_seen: u64,
    reservations: HashMap<CorrelationId, Reservation>,
}

impl WorkerRecord {
    /// Memory reserved for invocations dispatched after the last sample.
    pub fn pending_reservations_mb(&self) -> u64 {
        let since = self.last_sample.map_or(0, |s| s.taken_at);
        self.reservations.values().filter(|r| r.dispatched_at > since).map(|r| r.mb).sum()
    }

    pub fn effective_free_mb(&self) -> u64 {
        self.last_sample.map_or(0, |s| s.free_memory_mb).saturating_sub(self.pending_reservations_mb())
    }

    /// Schedulable: has reported at least once and is not silent for longer
    /// than the liveness timeout.
    pub fn is_live(&self, now: u64, liveness_timeout_ms: u64) -> bool {
        self.last_sample.is_some() && now.saturating_sub(self.last_seen) <= liveness_timeout_ms
    }

    pub fn in_flight_reservations(&self) -> usize {
        self.reservations.len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkerSnapshot {
    pub worker_id: WorkerId,
    pub address: String,
    pub capacity_mb: u32,
    pub epoch: u64,
    pub free_memory_mb: Option<u64>,
    pub effective_free_mb: u64,
    pub pending_reservations_mb: u64,
    pub in_flight: u64,
    pub cache_bytes: Option<u64>,
    pub last_seen: u64,
    pub live: bool,
}

#[derive(Debug)]
pub struct Registry {
    workers: BTreeMap<WorkerId, WorkerRecord>,
    liveness_timeout_ms: u64,
}

impl Registry {
    pub fn new(liveness_timeout_ms: u64) -> Self {
        Registry { workers: BTreeMap::new(), liveness_timeout_ms }
    }

    pub fn liveness_timeout_ms(&self) -> u64 {
        self.liveness_timeout_ms
    }

    /// Adds a worker or replaces its record (new connection or restart).
    /// Metrics start empty: the worker is not schedulable until it reports.
    pub fn upsert(&mut self, announce: &DiscoveryAnnounce, address: String, now: u64) {
        self.workers.insert(
            announce.worker_id,
            WorkerRecord {
                worker_id: announce.worker_id,
                address,
                capacity_mb: announce.capacity_mb,
                epoch: announce.epoch,
                last_sample: None,
                last_seen: now,
                reservations: HashMap::new(),
            },
        );
    }

    pub fn remove(&mut self, id: &WorkerId) -> Option<WorkerRecord> {
        self.workers.remove(id)
    }

    pub fn get(&self, id: &WorkerId) -> Option<&WorkerRecord> {
        self.workers.get(id)
    }

    pub fn touch(&mut self, id: &WorkerId, now: u64) {
        if let Some(w) = self.workers.get_mut(id) {
            w.last_seen = w.last_seen.max(now);
        }
    }

    /// Applies a heartbeat. Samples from unknown workers and samples not
    /// newer than the current one are dropped. Returns whether it applied.
    pub fn ingest_heartbeat(&mut self, sample: MetricsSample, now: u64) -> bool {
        let Some(w) = self.workers.get_mut(&sample.worker_id) else {
            return false;
        };
        w.last_seen = w.last_seen.max(now);
        if w.last_sample.is_some_and(|s| sample.taken_at <= s.taken_at) {
            return false;
        }
        w.last_sample = Some(sample);
        true
    }

    pub fn candidates(&self, now: u64) -> Vec<Candidate> {
        self.workers
            .values()
            .filter(|w| w.is_live(now, self.liveness_timeout_ms))
            .map(|w| Candidate { worker_id: w.worker_id, effective_free_mb: w.effective_free_mb() })
            .collect()
    }

    /// Selects a worker for `required_mb` and records the reservation.
    pub fn reserve(&mut self, cid: CorrelationId, required_mb: u64, now: u64) -> Option<WorkerId> {
        let chosen = select_worker(&self.candidates(now), required_mb)?;
        let w = self.workers.get_mut(&chosen).expect("candidate is registered");
        w.reservations.insert(cid, Reservation { mb: required_mb, dispatched_at: now });
        Some(chosen)
    }

    pub fn release(&mut self, worker: &WorkerId, cid: &CorrelationId) {
        if let Some(w) = self.workers.get_mut(worker) {
            w.reservations.remove(cid);
        }
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &WorkerRecord> {
        self.workers.values()
    }

    pub fn snapshot(&self, now: u64) -> Vec<WorkerSnapshot> {
        self.workers
            .values()
            .map(|w| WorkerSnapshot {
                worker_id: w.worker_id,
                address: w.address.clone(),
                capacity_mb: w.capacity_mb,
                epoch: w.epoch,
                free_memory_mb: w.last_sample.map(|s| s.free_memory_mb),
                effective_free_mb: w.effective_free_mb(),
                pending_reservations_mb: w.pending_reservations_mb(),
                in_flight: w.reservations.len() as u64,
                cache_bytes: w.last_sample.map(|s| s.cache_bytes),
                last_seen: w.last_seen,
                live: w.is_live(now, self.liveness_timeout_ms),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn announce(n: u8, capacity_mb: u32) -> DiscoveryAnnounce {
        DiscoveryAnnounce { worker_id: WorkerId([n; 16]), listen_address: format!("w{n}:1"), capacity_mb, epoch: 1 }
    }

    fn sample(n: u8, free: u64, taken_at: u64) -> MetricsSample {
        MetricsSample { worker_id: WorkerId([n; 16]), free_memory_mb: free, in_flight: 0, cache_bytes: 0, taken_at }
    }

    #[test]
    fn out_of_order_samples_keep_newest() {
        let mut r = Registry::new(15_000);
        r.upsert(&announce(1, 1024), "w1:1".into(), 0);
        assert!(r.ingest_heartbeat(sample(1, 100, 10), 10));
        assert!(!r.ingest_heartbeat(sample(1, 900, 5), 11));
        assert_eq!(r.get(&WorkerId([1; 16])).unwrap().last_sample.unwrap().taken_at, 10);
    }

    #[test]
    fn unknown_worker_sample_ignored() {
        let mut r = Registry::new(15_000);
        assert!(!r.ingest_heartbeat(sample(9, 100, 10), 10));
        assert!(r.is_empty());
    }

    #[test]
    fn silent_worker_is_excluded() {
        let mut r = Registry::new(15_000);
        r.upsert(&announce(1, 1024), "w1:1".into(), 0);
        r.ingest_heartbeat(sample(1, 1024, 1), 1_000);
        assert_eq!(r.candidates(16_000).len(), 1);
        assert!(r.candidates(16_001).is_empty());
    }

    #[test]
    fn worker_without_sample_is_not_schedulable() {
        let mut r = Registry::new(15_000);
        r.upsert(&announce(1, 1024), "w1:1".into(), 0);
        assert!(r.reserve(CorrelationId::random(), 1, 0).is_none());
    }

    #[test]
    fn reservations_count_until_next_sample() {
        let mut r = Registry::new(15_000);
        let id = WorkerId([1; 16]);
        r.upsert(&announce(1, 1024), "w1:1".into(), 0);
        r.ingest_heartbeat(sample(1, 1024, 100), 100);
        let a = CorrelationId::random();
        assert_eq!(r.reserve(a, 600, 200), Some(id));
        assert_eq!(r.get(&id).unwrap().effective_free_mb(), 424);
        // No room for a second 600 MiB invocation until the worker reports.
        assert_eq!(r.reserve(CorrelationId::random(), 600, 300), None);
        // A later sample already accounts for the dispatched invocation.
        r.ingest_heartbeat(sample(1, 424, 400), 400);
        assert_eq!(r.get(&id).unwrap().pending_reservations_mb(), 0);
        r.release(&id, &a);
        assert_eq!(r.get(&id).unwrap().in_flight_reservations(), 0);
    }
}
