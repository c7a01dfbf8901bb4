use fl_core::{select_worker, Candidate};
use fl_protocol::WorkerId;
use proptest::prelude::*;

fn candidates() -> impl Strategy<Value = Vec<Candidate>> {
    // Narrow id and memory ranges so ties and exact fits are common.
    prop::collection::vec((0u8..8, 0u64..6), 0..12).prop_map(|raw| {
        let mut seen = std::collections::HashSet::new();
        raw.into_iter()
            .filter(|(id, _)| seen.insert(*id))
            .map(|(id, free)| Candidate { worker_id: WorkerId([id; 16]), effective_free_mb: free * 128 })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn picks_max_free_smallest_id(set in candidates(), required in 0u64..800) {
        let qualifying: Vec<_> = set.iter().filter(|c| c.effective_free_mb >= required).collect();
        match select_worker(&set, required) {
            None => prop_assert!(qualifying.is_empty()),
            Some(id) => {
                let best = qualifying.iter().map(|c| c.effective_free_mb).max().unwrap();
                let expected = qualifying.iter().filter(|c| c.effective_free_mb == best).map(|c| c.worker_id).min().unwrap();
                prop_assert_eq!(id, expected);
            }
        }
    }

    #[test]
    fn permutation_invariant(set in candidates(), required in 0u64..800, seed in any::<u64>()) {
        let mut shuffled = set.clone();
        // Deterministic Fisher-Yates driven by the seed.
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(select_worker(&set, required), select_worker(&shuffled, required));
    }
}
