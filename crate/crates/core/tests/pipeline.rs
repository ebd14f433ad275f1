use std::sync::Arc;

use forge::pipeline::{assemble, stats, EXHAUSTED_RETRIES};
use forge::synthetic::{SyntheticSpec, SyntheticWorld};

#[test]
fn synthetic_run_matches_truth_table() {
    let world = Arc::new(SyntheticWorld::new(SyntheticSpec { samples: 60, ..SyntheticSpec::default() }));
    let dir = tempfile::tempdir().unwrap();
    let partition = world.pipeline(dir.path()).run(&world.dataset).unwrap();
    for r in &partition.direct {
        assert!(world.truth[&r.sample.sample_id].student);
    }
    for r in &partition.enhanced {
        let t = world.truth[&r.sample.sample_id];
        assert!(!t.student && t.teacher);
    }
    for p in &partition.agentic {
        let t = world.truth[p.sample_id()];
        assert_eq!(Some(p.attempts.len() as u32), t.agent_attempt, "{:?}", p.attempts);
        assert!(p.is_complete());
    }
    for d in &partition.discard {
        assert_eq!(d.reason, EXHAUSTED_RETRIES);
        assert_eq!(d.attempts.len(), 8);
    }
    assert_eq!(partition.sample_count(), 60);
    let corpus = assemble(&partition, None).unwrap();
    let s = stats(&corpus.records);
    assert_eq!(s.tiers.get(&3).copied().unwrap_or(0), 2 * partition.agentic.len());
}
