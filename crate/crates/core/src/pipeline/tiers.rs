use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use super::{AgenticPair, AttemptLog, DatasetRecord, Discard, MatcherMap};
use crate::env::{run_direct, run_episode, Attempt, Environment, EnvironmentSpec, Outcome, Sample};
use crate::policy::{recap, PolicyHandle, RecapFilter};
use crate::seed::pass_seed;
use crate::trajectory::{EnvironmentId, Mode, Role, Trajectory, Turn};
use crate::validate::Linter;

/// Alg. 1's retry budget.
pub const DEFAULT_RETRIES: u32 = 8;
/// Temperatures per attempt; the last repeats.
pub const DEFAULT_SCHEDULE: [f64; 2] = [0.2, 0.7];

pub const EXHAUSTED_RETRIES: &str = "exhausted_retries";
pub const NO_ENVIRONMENT: &str = "no_environment";
pub const TIER_DISABLED: &str = "tier_disabled";

/// Result of a single-answer pass.
#[derive(Debug, Clone, Default)]
pub struct TierOutput {
    pub records: Vec<DatasetRecord>,
    pub residual: Vec<Sample>,
    /// Samples whose policy call failed, with the reason; they are also in `residual`.
    pub failures: Vec<(String, String)>,
}

fn direct_pass(samples: &[Sample], policy: &PolicyHandle, matchers: &MatcherMap, mode: Mode) -> TierOutput {
    let spec = EnvironmentSpec::for_env(EnvironmentId::Direct);
    let tier = mode.tier();
    let results: Vec<(Sample, Result<DatasetRecord, Option<String>>)> = samples
        .par_iter()
        .map(|s| {
            let attempt = Attempt::single(pass_seed(&s.sample_id, tier));
            let result = match run_direct(&spec, s, policy, attempt) {
                Err(e) => Err(Some(e.to_string())),
                Ok(r) => match (r.failure(), r.final_answer()) {
                    (Some(f), _) => Err(Some(f.to_string())),
                    (None, Some(a)) if matchers.get(&s.dataset_id).matches(a, &s.gold_answer) => {
                        r.trajectory(mode).map(|t| DatasetRecord::new(s.clone(), t)).map_err(|e| Some(e.to_string()))
                    }
                    _ => Err(None),
                },
            };
            (s.clone(), result)
        })
        .collect();

    let mut out = TierOutput::default();
    for (s, r) in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(reason) => {
                if let Some(reason) = reason {
                    warn!(sample_id = %s.sample_id, tier, %reason, "policy failure, sample moves on");
                    out.failures.push((s.sample_id.clone(), reason));
                }
                out.residual.push(s);
            }
        }
    }
    out.records.sort_by(|a, b| a.sample.sample_id.cmp(&b.sample.sample_id));
    out.residual.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    info!(tier, kept = out.records.len(), residual = out.residual.len(), "direct pass done");
    out
}

/// Student answers each sample once without tools; correct answers become
/// depth-0 direct records.
pub fn run_tier1(samples: &[Sample], student: &PolicyHandle, matchers: &MatcherMap) -> TierOutput {
    direct_pass(samples, student, matchers, Mode::Direct)
}

/// Teacher retries what the student missed, still without tools.
pub fn run_tier2(residual: &[Sample], teacher: &PolicyHandle, matchers: &MatcherMap) -> TierOutput {
    direct_pass(residual, teacher, matchers, Mode::Enhanced)
}

/// Everything the agentic tier needs besides the samples.
#[derive(Clone)]
pub struct AgenticTier {
    pub agent: PolicyHandle,
    pub recap: PolicyHandle,
    /// Environment per dataset id.
    pub environments: BTreeMap<String, Arc<Environment>>,
    pub matchers: MatcherMap,
    pub linter: Linter,
    pub retries: u32,
    pub schedule: Vec<f64>,
    pub recap_filter: RecapFilter,
}

#[derive(Debug, Clone, Default)]
pub struct Tier3Output {
    pub pairs: Vec<AgenticPair>,
    pub discard: Vec<Discard>,
}

enum SampleResult {
    Pair(Box<AgenticPair>),
    Discard(Discard),
}

/// Hindsight reasoning on the prospective turns; actions, observations and
/// the final body stay as they were.
fn retrospective(prospective: &Trajectory, thinks: &[String], final_think: &str) -> Trajectory {
    let mut t = prospective.clone();
    let mut next = thinks.iter();
    let last = t.turns.len() - 1;
    for (i, turn) in t.turns.iter_mut().enumerate() {
        match turn.role {
            Role::FunctionCall => {
                if let (Some(think), Ok(action)) = (next.next(), turn.action()) {
                    *turn = Turn::function_call(think, &action);
                }
            }
            Role::Gpt if i == last => {
                let body = turn.body().to_string();
                *turn = Turn::gpt(Some(final_think), &body);
            }
            _ => {}
        }
    }
    t.mode = Mode::Retrospective;
    t.tier = Some(Mode::Retrospective.tier());
    t
}

impl AgenticTier {
    pub fn new(agent: PolicyHandle, recap: PolicyHandle, linter: Linter) -> Self {
        AgenticTier {
            agent,
            recap,
            environments: BTreeMap::new(),
            matchers: MatcherMap::default(),
            linter,
            retries: DEFAULT_RETRIES,
            schedule: DEFAULT_SCHEDULE.to_vec(),
            recap_filter: RecapFilter::default(),
        }
    }

    pub fn with_environment(mut self, dataset_id: &str, env: Environment) -> Self {
        self.environments.insert(dataset_id.to_string(), Arc::new(env));
        self
    }

    /// One attempt: run, then gate on answer, forcing and validation.
    fn attempt(&self, env: &Environment, s: &Sample, index: u32) -> (AttemptLog, Option<Trajectory>) {
        let attempt = Attempt::new(&s.sample_id, index, &self.schedule);
        let log = |result: String| AttemptLog { index, seed: attempt.seed, result };
        let r = match run_episode(env, s, &self.agent, attempt) {
            Ok(r) => r,
            Err(e) => return (log(format!("error: {e}")), None),
        };
        match &r.outcome {
            Outcome::Failed(reason) => return (log(format!("failed: {reason}")), None),
            Outcome::Forced => return (log("forced".to_string()), None),
            Outcome::Answered => {}
        }
        let answer = r.final_answer().unwrap_or_default();
        let matcher = self.matchers.get(&s.dataset_id);
        if !matcher.matches(answer, &s.gold_answer) {
            return (log("wrong_answer".to_string()), None);
        }
        let t = match r.trajectory(Mode::Prospective) {
            Ok(t) => t,
            Err(e) => return (log(format!("error: {e}")), None),
        };
        let report = self.linter.lint_with(&t, &env.spec, matcher, Some(&s.gold_answer));
        if report.rejected() {
            let rules: Vec<&str> = report.reject_rules().iter().map(|r| r.as_str()).collect();
            return (log(format!("invalid: {}", rules.join(","))), None);
        }
        (log("ok".to_string()), Some(t))
    }

    fn run_sample(&self, s: &Sample) -> SampleResult {
        let Some(env) = self.environments.get(&s.dataset_id) else {
            return SampleResult::Discard(Discard::new(s, NO_ENVIRONMENT, Vec::new()));
        };
        let mut attempts = Vec::new();
        for index in 1..=self.retries {
            let (log, trajectory) = self.attempt(env, s, index);
            debug!(sample_id = %s.sample_id, attempt = index, result = %log.result, "agentic attempt");
            attempts.push(log);
            let Some(prospective) = trajectory else { continue };

            let actions = match prospective.actions() {
                Ok(a) => a,
                Err(e) => {
                    attempts.last_mut().expect("pushed above").result = format!("error: {e}");
                    continue;
                }
            };
            let observations: Vec<String> =
                prospective.turns.iter().filter(|t| t.role == Role::Observation).map(|t| t.content.clone()).collect();
            let recap_result =
                recap(&self.recap, &s.question, &prospective.final_answer, &actions, &observations, &self.recap_filter);
            let (retro, recap_filtered) = match recap_result {
                Ok(r) => {
                    let thinks: Vec<String> = r.actions.iter().map(|a| a.think.clone()).collect();
                    let t = retrospective(&prospective, &thinks, &r.final_think);
                    (Some(DatasetRecord::new(s.clone(), t)), None)
                }
                Err(e) => {
                    warn!(sample_id = %s.sample_id, error = %e, "recap filtered");
                    (None, Some(e.to_string()))
                }
            };
            return SampleResult::Pair(Box::new(AgenticPair {
                prospective: DatasetRecord::new(s.clone(), prospective),
                retrospective: retro,
                recap_filtered,
                attempts,
            }));
        }
        SampleResult::Discard(Discard::new(s, EXHAUSTED_RETRIES, attempts))
    }

    /// Up to `retries` episodes per sample; the first correct, valid one is
    /// paired with its recap rewrite.
    pub fn run(&self, residual: &[Sample]) -> Tier3Output {
        let results: Vec<SampleResult> = residual.par_iter().map(|s| self.run_sample(s)).collect();
        let mut out = Tier3Output::default();
        for r in results {
            match r {
                SampleResult::Pair(p) => out.pairs.push(*p),
                SampleResult::Discard(d) => out.discard.push(d),
            }
        }
        out.pairs.sort_by(|a, b| a.sample_id().cmp(b.sample_id()));
        out.discard.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        info!(pairs = out.pairs.len(), discard = out.discard.len(), "agentic tier done");
        out
    }
}

/// Sample attempts grouped by outcome label, for the stats sidecar.
pub fn attempt_outcomes(pairs: &[AgenticPair], discard: &[Discard]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let logs = pairs.iter().flat_map(|p| &p.attempts).chain(discard.iter().flat_map(|d| &d.attempts));
    for log in logs {
        let label = log.result.split(':').next().unwrap_or_default().to_string();
        *out.entry(label).or_default() += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierSet {
    pub direct: bool,
    pub enhanced: bool,
    pub agentic: bool,
}

impl Default for TierSet {
    fn default() -> Self {
        TierSet { direct: true, enhanced: true, agentic: true }
    }
}

impl std::str::FromStr for TierSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut set = TierSet { direct: false, enhanced: false, agentic: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "1" => set.direct = true,
                "2" => set.enhanced = true,
                "3" => set.agentic = true,
                other => return Err(format!("unknown tier `{other}` (expected 1, 2 or 3)")),
            }
        }
        if !(set.direct || set.enhanced || set.agentic) {
            return Err("no tiers selected".to_string());
        }
        Ok(set)
    }
}
