//! Worker-side cache of compiled modules.
//!
//! Bounded by a byte threshold: an insert that pushes the total over the
//! threshold evicts the entries with the oldest `last_activity` until it
//! fits. Independently, entries idle for strictly longer than the TTL are
//! dropped by [`ModuleCache::ttl_sweep`].

use std::collections::HashMap;

use fl_protocol::FunctionId;

#[derive(Debug, Clone)]
pub struct CacheEntry<T> {
    pub id: FunctionId,
    pub compiled: T,
    pub byte_size: u64,
    pub last_activity: u64,
    pub inserted_at: u64,
    /// Logical touch order; breaks ties between equal `last_activity` stamps.
    seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    /// Admitted; the listed entries were evicted to make room, oldest first.
    Admitted { evicted: Vec<FunctionId> },
    /// Larger than the whole threshold on its own; not cached.
    Rejected,
}

#[derive(Debug)]
pub struct ModuleCache<T> {
    entries: HashMap<FunctionId, CacheEntry<T>>,
    threshold_bytes: u64,
    ttl_ms: u64,
    total_bytes: u64,
    seq: u64,
}

impl<T: Clone> ModuleCache<T> {
    pub fn new(threshold_bytes: u64, ttl_ms: u64) -> Self {
        ModuleCache { entries: HashMap::new(), threshold_bytes, ttl_ms, total_bytes: 0, seq: 0 }
    }

    pub fn threshold_bytes(&self) -> u64 {
        self.threshold_bytes
    }

    pub fn ttl_ms(&self) -> u64 {
        self.ttl_ms
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &FunctionId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn peek(&self, id: &FunctionId) -> Option<&CacheEntry<T>> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &FunctionId> {
        self.entries.keys()
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Looks up an entry for execution, refreshing its activity stamp.
    pub fn get(&mut self, id: &FunctionId, now: u64) -> Option<T> {
        let seq = self.next_seq();
        let e = self.entries.get_mut(id)?;
        e.last_activity = e.last_activity.max(now);
        e.seq = seq;
        Some(e.compiled.clone())
    }

    pub fn remove(&mut self, id: &FunctionId) -> Option<CacheEntry<T>> {
        let e = self.entries.remove(id)?;
        self.total_bytes -= e.byte_size;
        Some(e)
    }

    /// Inserts (or replaces) an entry, then evicts as needed.
    pub fn insert(&mut self, id: FunctionId, compiled: T, byte_size: u64, now: u64) -> InsertOutcome {
        let byte_size = byte_size.max(1);
        self.remove(&id);
        if byte_size > self.threshold_bytes {
            return InsertOutcome::Rejected;
        }
        let seq = self.next_seq();
        self.total_bytes += byte_size;
        self.entries.insert(
            id.clone(),
            CacheEntry { id: id.clone(), compiled, byte_size, last_activity: now, inserted_at: now, seq },
        );
        InsertOutcome::Admitted { evicted: self.evict_if_needed(&id) }
    }

    /// Evicts least-recently-active entries, never `keep`, until the total
    /// fits the threshold. Returns evicted ids in eviction order.
    pub fn evict_if_needed(&mut self, keep: &FunctionId) -> Vec<FunctionId> {
        let mut evicted = Vec::new();
        while self.total_bytes > self.threshold_bytes {
            let victim = self
                .entries
                .values()
                .filter(|e| &e.id != keep)
                .min_by_key(|e| (e.last_activity, e.seq))
                .map(|e| e.id.clone());
            let Some(victim) = victim else { break };
            self.remove(&victim);
            evicted.push(victim);
        }
        evicted
    }

    /// Drops entries idle for strictly longer than the TTL, oldest first.
    pub fn ttl_sweep(&mut self, now: u64) -> Vec<FunctionId> {
        let mut expired: Vec<_> = self
            .entries
            .values()
            .filter(|e| now.saturating_sub(e.last_activity) > self.ttl_ms)
            .map(|e| (e.last_activity, e.seq, e.id.clone()))
            .collect();
        expired.sort();
        expired
            .into_iter()
            .map(|(_, _, id)| {
                self.remove(&id);
                id
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: u64 = 60_000;

    fn id(n: &str) -> FunctionId {
        FunctionId::new("m", n).unwrap()
    }

    #[test]
    fn evicts_longest_inactive() {
        let mut c = ModuleCache::new(100, 45 * MIN);
        assert_eq!(c.insert(id("a"), (), 40, 1), InsertOutcome::Admitted { evicted: vec![] });
        assert_eq!(c.insert(id("b"), (), 40, 2), InsertOutcome::Admitted { evicted: vec![] });
        assert_eq!(c.insert(id("c"), (), 40, 3), InsertOutcome::Admitted { evicted: vec![id("a")] });
        assert_eq!(c.total_bytes(), 80);
    }

    #[test]
    fn oversize_entry_is_rejected() {
        let mut c = ModuleCache::new(100, 45 * MIN);
        assert_eq!(c.insert(id("big"), (), 120, 1), InsertOutcome::Rejected);
        assert!(c.is_empty());
        assert_eq!(c.total_bytes(), 0);
    }

    #[test]
    fn oversize_replacement_drops_stale_version() {
        let mut c = ModuleCache::new(100, 45 * MIN);
        c.insert(id("f"), 1, 10, 1);
        c.insert(id("g"), 2, 10, 1);
        assert_eq!(c.insert(id("f"), 3, 500, 2), InsertOutcome::Rejected);
        assert!(!c.contains(&id("f")));
        assert!(c.contains(&id("g")));
    }

    #[test]
    fn invocation_refreshes_activity() {
        let mut c = ModuleCache::new(100, 45 * MIN);
        c.insert(id("a"), (), 40, 1);
        c.insert(id("b"), (), 40, 2);
        assert!(c.get(&id("a"), 5).is_some());
        assert_eq!(c.insert(id("d"), (), 40, 6), InsertOutcome::Admitted { evicted: vec![id("b")] });
    }

    #[test]
    fn replace_keeps_accounting_exact() {
        let mut c = ModuleCache::new(100, 45 * MIN);
        c.insert(id("a"), 1, 40, 1);
        c.insert(id("a"), 2, 70, 2);
        assert_eq!(c.total_bytes(), 70);
        assert_eq!(c.get(&id("a"), 3), Some(2));
    }

    #[test]
    fn ttl_boundary_is_strict() {
        let mut c = ModuleCache::new(1000, 45 * MIN);
        c.insert(id("idle46"), (), 1, 0);
        c.insert(id("idle44"), (), 1, 2 * MIN);
        c.insert(id("idle45"), (), 1, MIN);
        assert_eq!(c.ttl_sweep(46 * MIN), vec![id("idle46")]);
        assert!(c.contains(&id("idle45")));
        assert!(c.contains(&id("idle44")));
        assert_eq!(c.ttl_sweep(46 * MIN + 1), vec![id("idle45")]);
    }
}
