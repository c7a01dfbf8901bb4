//! Worker selection: largest effective free memory wins, ties go to the
//! lexicographically smallest worker id.

use fl_protocol::WorkerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub worker_id: WorkerId,
    pub effective_free_mb: u64,
}

/// Returns the chosen worker, or `None` when nobody can host `required_mb`.
/// Callers pass live workers only.
pub fn select_worker(candidates: &[Candidate], required_mb: u64) -> Option<WorkerId> {
    candidates
        .iter()
        .filter(|c| c.effective_free_mb >= required_mb)
        .max_by(|a, b| {
            a.effective_free_mb
                .cmp(&b.effective_free_mb)
                .then_with(|| b.worker_id.cmp(&a.worker_id))
        })
        .map(|c| c.worker_id)
}
