//! Three-tier generation: student pass, teacher pass, agentic episodes with
//! retries, hindsight pairing, corpus assembly and statistics.

mod assemble;
mod stats;
mod tiers;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assemble::{assemble, balance_label, read_corpus, write_corpus, BalanceConfig, Corpus};
pub use stats::{stats, GroupCount, RunSummary, StatsReport};
pub use tiers::{
    attempt_outcomes, run_tier1, run_tier2, AgenticTier, Tier3Output, TierOutput, TierSet, DEFAULT_RETRIES,
    DEFAULT_SCHEDULE, EXHAUSTED_RETRIES, NO_ENVIRONMENT, TIER_DISABLED,
};

use crate::env::Sample;
use crate::eval::{Matcher, MatcherKind};
use crate::policy::PolicyHandle;
use crate::trajectory::{Mode, Trajectory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("partition invariant violated: {0}")]
    InvariantViolation(String),
    #[error("duplicate sample id `{0}` in dataset")]
    DuplicateSample(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("{0}")]
    Io(String),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
}

/// A sample with one of its trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub sample: Sample,
    pub trajectory: Trajectory,
}

impl DatasetRecord {
    pub fn new(sample: Sample, trajectory: Trajectory) -> Self {
        DatasetRecord { sample, trajectory }
    }

    pub fn mode(&self) -> Mode {
        self.trajectory.mode
    }

    pub fn tier(&self) -> u8 {
        self.trajectory.mode.tier()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub index: u32,
    pub seed: u64,
    /// `ok`, `wrong_answer`, `forced`, `invalid: <rules>`, `failed: <reason>` or `error: <reason>`.
    pub result: String,
}

/// Agentic supervision for one sample. `retrospective` is absent when the
/// recap was filtered; such pairs are kept for accounting but not assembled.
#[derive(Debug, Clone, PartialEq)]
pub struct AgenticPair {
    pub prospective: DatasetRecord,
    pub retrospective: Option<DatasetRecord>,
    pub recap_filtered: Option<String>,
    pub attempts: Vec<AttemptLog>,
}

impl AgenticPair {
    pub fn sample_id(&self) -> &str {
        &self.prospective.sample.sample_id
    }

    pub fn is_complete(&self) -> bool {
        self.retrospective.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub sample_id: String,
    pub dataset_id: String,
    pub reason: String,
    pub attempts: Vec<AttemptLog>,
}

impl Discard {
    pub fn new(sample: &Sample, reason: &str, attempts: Vec<AttemptLog>) -> Self {
        Discard {
            sample_id: sample.sample_id.clone(),
            dataset_id: sample.dataset_id.clone(),
            reason: reason.to_string(),
            attempts,
        }
    }
}

/// Matcher per dataset id, with a fallback.
#[derive(Debug, Clone)]
pub struct MatcherMap {
    pub default: Matcher,
    pub by_dataset: BTreeMap<String, Matcher>,
}

impl Default for MatcherMap {
    fn default() -> Self {
        MatcherMap { default: Matcher::new(MatcherKind::Soft), by_dataset: BTreeMap::new() }
    }
}

impl MatcherMap {
    pub fn with(mut self, dataset_id: &str, matcher: Matcher) -> Self {
        self.by_dataset.insert(dataset_id.to_string(), matcher);
        self
    }

    pub fn get(&self, dataset_id: &str) -> &Matcher {
        self.by_dataset.get(dataset_id).unwrap_or(&self.default)
    }
}

/// Where every input sample ended up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TierPartition {
    pub direct: Vec<DatasetRecord>,
    pub enhanced: Vec<DatasetRecord>,
    pub agentic: Vec<AgenticPair>,
    pub discard: Vec<Discard>,
}

impl TierPartition {
    pub fn sample_count(&self) -> usize {
        self.direct.len() + self.enhanced.len() + self.agentic.len() + self.discard.len()
    }

    fn ids(&self) -> impl Iterator<Item = &str> {
        self.direct
            .iter()
            .chain(&self.enhanced)
            .map(|r| r.sample.sample_id.as_str())
            .chain(self.agentic.iter().map(AgenticPair::sample_id))
            .chain(self.discard.iter().map(|d| d.sample_id.as_str()))
    }

    /// Disjointness, tier/mode consistency and pair symmetry; with
    /// `dataset` also completeness.
    pub fn check(&self, dataset: Option<&[Sample]>) -> Result<(), PipelineError> {
        let mut seen = BTreeSet::new();
        for id in self.ids() {
            if !seen.insert(id) {
                return Err(PipelineError::InvariantViolation(format!("sample `{id}` appears in two sets")));
            }
        }
        if let Some(dataset) = dataset {
            let input: BTreeSet<&str> = dataset.iter().map(|s| s.sample_id.as_str()).collect();
            if input != seen {
                return Err(PipelineError::InvariantViolation(format!(
                    "partition covers {} ids, dataset has {}",
                    seen.len(),
                    input.len()
                )));
            }
        }
        let modes = [(Mode::Direct, &self.direct), (Mode::Enhanced, &self.enhanced)];
        for (mode, set) in modes {
            if let Some(r) = set.iter().find(|r| r.mode() != mode || r.trajectory.depth() != 0) {
                return Err(PipelineError::InvariantViolation(format!(
                    "`{}` in the {} set has mode {} and depth {}",
                    r.sample.sample_id,
                    mode.as_str(),
                    r.mode().as_str(),
                    r.trajectory.depth()
                )));
            }
        }
        for p in &self.agentic {
            if p.prospective.mode() != Mode::Prospective {
                return Err(PipelineError::InvariantViolation(format!("`{}` prospective mode", p.sample_id())));
            }
            if let Some(r) = &p.retrospective {
                let (a, b) = (&p.prospective.trajectory, &r.trajectory);
                if r.mode() != Mode::Retrospective
                    || a.sample_id != b.sample_id
                    || a.environment_id != b.environment_id
                    || a.action_signature() != b.action_signature()
                {
                    return Err(PipelineError::InvariantViolation(format!(
                        "pair `{}` disagrees on mode, environment or actions",
                        p.sample_id()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Policies and settings for a full run.
#[derive(Clone)]
pub struct Pipeline {
    pub student: PolicyHandle,
    pub teacher: PolicyHandle,
    pub agentic: AgenticTier,
    pub tiers: TierSet,
}

impl Pipeline {
    /// Runs the selected tiers in order. Samples left over by a disabled
    /// tier are discarded with `tier_disabled`.
    pub fn run(&self, dataset: &[Sample]) -> Result<TierPartition, PipelineError> {
        let mut ids = BTreeSet::new();
        for s in dataset {
            if !ids.insert(s.sample_id.as_str()) {
                return Err(PipelineError::DuplicateSample(s.sample_id.clone()));
            }
            s.check().map_err(|e| PipelineError::InvalidSample(e.to_string()))?;
        }
        let matchers = &self.agentic.matchers;
        let mut partition = TierPartition::default();
        let mut residual: Vec<Sample> = dataset.to_vec();
        residual.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

        if self.tiers.direct {
            let out = run_tier1(&residual, &self.student, matchers);
            partition.direct = out.records;
            residual = out.residual;
        }
        if self.tiers.enhanced {
            let out = run_tier2(&residual, &self.teacher, matchers);
            partition.enhanced = out.records;
            residual = out.residual;
        }
        if self.tiers.agentic {
            let out = self.agentic.run(&residual);
            partition.agentic = out.pairs;
            partition.discard = out.discard;
        } else {
            partition.discard = residual.iter().map(|s| Discard::new(s, TIER_DISABLED, Vec::new())).collect();
        }
        partition.check(Some(dataset))?;
        Ok(partition)
    }
}
