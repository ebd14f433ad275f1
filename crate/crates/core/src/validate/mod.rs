//! Structural and behavioral trajectory filters, class balancing and audit
//! sampling.

mod behavioral;
mod lexicon;
mod sampling;
mod structural;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use behavioral::{behavioral_check, meaningful_chars};
pub use lexicon::{Lexicon, DEFAULT_LEXICON};
pub use sampling::{audit_sample, class_balance};
pub use structural::{structural_check, structural_check_bounded, MAX_TRAJECTORY_CHARS};

use crate::env::EnvironmentSpec;
use crate::eval::Matcher;
use crate::trajectory::{EnvironmentId, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleId {
    Correctness,
    TurnGrammar,
    UnknownTool,
    BadArguments,
    MissingTerminate,
    ImageAlignment,
    LengthBound,
    DepthBound,
    HallucinationKeyword,
    RepetitionLoop,
    Truncation,
    ShortContent,
    MissingThink,
}

impl RuleId {
    pub const ALL: [RuleId; 13] = [
        RuleId::Correctness,
        RuleId::TurnGrammar,
        RuleId::UnknownTool,
        RuleId::BadArguments,
        RuleId::MissingTerminate,
        RuleId::ImageAlignment,
        RuleId::LengthBound,
        RuleId::DepthBound,
        RuleId::HallucinationKeyword,
        RuleId::RepetitionLoop,
        RuleId::Truncation,
        RuleId::ShortContent,
        RuleId::MissingThink,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::Correctness => "correctness",
            RuleId::TurnGrammar => "turn_grammar",
            RuleId::UnknownTool => "unknown_tool",
            RuleId::BadArguments => "bad_arguments",
            RuleId::MissingTerminate => "missing_terminate",
            RuleId::ImageAlignment => "image_alignment",
            RuleId::LengthBound => "length_bound",
            RuleId::DepthBound => "depth_bound",
            RuleId::HallucinationKeyword => "hallucination_keyword",
            RuleId::RepetitionLoop => "repetition_loop",
            RuleId::Truncation => "truncation",
            RuleId::ShortContent => "short_content",
            RuleId::MissingThink => "missing_think",
        }
    }

    /// Hallucination hits go to review; everything else discards.
    pub fn severity(self) -> Severity {
        match self {
            RuleId::HallucinationKeyword => Severity::Flag,
            _ => Severity::Reject,
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Reject,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: RuleId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<usize>,
    pub message: String,
    pub severity: Severity,
}

impl Violation {
    pub fn new(rule_id: RuleId, turn_index: Option<usize>, message: impl Into<String>) -> Self {
        Violation { rule_id, turn_index, message: message.into(), severity: rule_id.severity() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Reject,
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintReport {
    pub trajectory_id: String,
    pub violations: Vec<Violation>,
    pub verdict: Verdict,
}

impl LintReport {
    pub fn new(trajectory_id: &str, mut violations: Vec<Violation>) -> Self {
        violations.sort_by_key(|v| (v.turn_index, v.rule_id));
        let verdict = if violations.iter().any(|v| v.severity == Severity::Reject) {
            Verdict::Reject
        } else if violations.is_empty() {
            Verdict::Pass
        } else {
            Verdict::Flagged
        };
        LintReport { trajectory_id: trajectory_id.to_string(), violations, verdict }
    }

    pub fn merge(self, other: LintReport) -> LintReport {
        let mut v = self.violations;
        v.extend(other.violations);
        LintReport::new(&self.trajectory_id, v)
    }

    pub fn rejected(&self) -> bool {
        self.verdict == Verdict::Reject
    }

    /// Distinct reject rules, sorted.
    pub fn reject_rules(&self) -> Vec<RuleId> {
        let mut rules: Vec<RuleId> =
            self.violations.iter().filter(|v| v.severity == Severity::Reject).map(|v| v.rule_id).collect();
        rules.sort();
        rules.dedup();
        rules
    }

    pub fn has(&self, rule: RuleId) -> bool {
        self.violations.iter().any(|v| v.rule_id == rule)
    }
}

/// Shared inputs of a lint run.
#[derive(Debug, Clone)]
pub struct Linter {
    pub matcher: Matcher,
    pub lexicon: Lexicon,
    pub length_bound: usize,
    /// Depth bound per environment; the environment default when absent.
    pub depth_bounds: BTreeMap<EnvironmentId, usize>,
}

impl Linter {
    pub fn new(matcher: Matcher, lexicon: Lexicon) -> Self {
        Linter { matcher, lexicon, length_bound: MAX_TRAJECTORY_CHARS, depth_bounds: BTreeMap::new() }
    }

    /// The environment spec with this linter's depth bound applied.
    pub fn spec_for(&self, env: EnvironmentId) -> EnvironmentSpec {
        let spec = EnvironmentSpec::for_env(env);
        match self.depth_bounds.get(&env) {
            Some(&b) => spec.with_t_max(b),
            None => spec,
        }
    }

    /// Both stages. `gold` overrides the answer carried in the metadata.
    pub fn lint(&self, t: &Trajectory, spec: &EnvironmentSpec, gold: Option<&str>) -> LintReport {
        self.lint_with(t, spec, &self.matcher, gold)
    }

    /// [`Linter::lint`] with a dataset-specific answer matcher.
    pub fn lint_with(
        &self,
        t: &Trajectory,
        spec: &EnvironmentSpec,
        matcher: &Matcher,
        gold: Option<&str>,
    ) -> LintReport {
        structural_check_bounded(t, spec, matcher, gold, self.length_bound).merge(behavioral_check(t, &self.lexicon))
    }

    /// Lints a corpus in parallel; reports are sorted by trajectory id.
    pub fn lint_corpus(&self, corpus: &[Trajectory]) -> Vec<LintReport> {
        let mut reports: Vec<LintReport> =
            corpus.par_iter().map(|t| self.lint(t, &self.spec_for(t.environment_id), None)).collect();
        reports.sort_by(|a, b| a.trajectory_id.cmp(&b.trajectory_id));
        reports
    }
}
