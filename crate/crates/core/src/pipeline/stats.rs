use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{attempt_outcomes, TierPartition};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupCount {
    pub dataset: String,
    pub tier: u8,
    pub environment: String,
    pub records: usize,
}

/// Sample-level outcome of a run, before assembly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples: usize,
    pub direct: usize,
    pub enhanced: usize,
    pub agentic: usize,
    pub discarded: usize,
    pub recap_filtered: usize,
    pub balanced_out: usize,
    /// Sample fractions per tier (1, 2, 3) and discard; they sum to 1.
    pub fractions: BTreeMap<String, f64>,
    pub discard_reasons: BTreeMap<String, usize>,
    /// Agentic attempts by outcome label.
    pub attempt_outcomes: BTreeMap<String, usize>,
    /// Number of samples by attempts used, for samples that produced a pair.
    pub attempts_to_success: BTreeMap<usize, usize>,
}

impl RunSummary {
    pub fn from_partition(p: &TierPartition, balanced_out: usize) -> Self {
        let n = p.sample_count();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let mut s = RunSummary {
            samples: n,
            direct: p.direct.len(),
            enhanced: p.enhanced.len(),
            agentic: p.agentic.len(),
            discarded: p.discard.len(),
            recap_filtered: p.agentic.iter().filter(|a| !a.is_complete()).count(),
            balanced_out,
            attempt_outcomes: attempt_outcomes(&p.agentic, &p.discard),
            ..RunSummary::default()
        };
        for (k, v) in [("tier1", s.direct), ("tier2", s.enhanced), ("tier3", s.agentic), ("discard", s.discarded)] {
            s.fractions.insert(k.to_string(), frac(v));
        }
        for d in &p.discard {
            *s.discard_reasons.entry(d.reason.clone()).or_default() += 1;
        }
        for a in &p.agentic {
            *s.attempts_to_success.entry(a.attempts.len()).or_default() += 1;
        }
        s
    }
}

/// Corpus statistics; `run` is present when produced by `generate`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub records: usize,
    pub groups: Vec<GroupCount>,
    pub tiers: BTreeMap<u8, usize>,
    pub modes: BTreeMap<String, usize>,
    pub environments: BTreeMap<String, usize>,
    pub depth_histogram: BTreeMap<usize, usize>,
    pub mean_depth: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSummary>,
}

/// Counts per (dataset, tier, environment), tiers, modes and depths.
pub fn stats(corpus: &[Trajectory]) -> StatsReport {
    let mut r = StatsReport { records: corpus.len(), ..StatsReport::default() };
    let mut groups: BTreeMap<(String, u8, String), usize> = BTreeMap::new();
    let mut depth_sum = 0;
    for t in corpus {
        let tier = t.tier.unwrap_or_else(|| t.mode.tier());
        let dataset = t.dataset_id.clone().unwrap_or_else(|| "(unknown)".to_string());
        *groups.entry((dataset, tier, t.environment_id.to_string())).or_default() += 1;
        *r.tiers.entry(tier).or_default() += 1;
        *r.modes.entry(t.mode.as_str().to_string()).or_default() += 1;
        *r.environments.entry(t.environment_id.to_string()).or_default() += 1;
        *r.depth_histogram.entry(t.depth()).or_default() += 1;
        depth_sum += t.depth();
    }
    r.groups = groups
        .into_iter()
        .map(|((dataset, tier, environment), records)| GroupCount { dataset, tier, environment, records })
        .collect();
    if !corpus.is_empty() {
        r.mean_depth = depth_sum as f64 / corpus.len() as f64;
    }
    r
}
