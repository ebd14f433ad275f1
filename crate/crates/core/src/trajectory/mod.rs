//! Unified trajectory model.
//!
//! A trajectory is a `human → (function_call → observation)* → gpt` conversation.
//! Its interaction depth is the number of `function_call` turns; depth 0 is a
//! direct answer. Documents are stored in a ShareGPT-style JSON layout with
//! canonical (sorted-key, compact) encoding so fixtures are byte-stable.

mod codec;
mod schema;
mod turn;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codec::{canonical_json, deserialize, parse_lenient, serialize, ParseError, ParseErrorKind};
pub use schema::{ParamSpec, ParamType, SchemaError, ToolSchema};
pub use turn::{count_image_tokens, render_with_think, split_think, Action, ActionParseError, Role, Turn, IMAGE_TOKEN};

/// Interaction regime a trajectory was produced in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentId {
    ToolCalling,
    Interleaved,
    Collaboration,
    Simulation,
    Direct,
}

impl EnvironmentId {
    pub const AGENTIC: [EnvironmentId; 4] = [
        EnvironmentId::ToolCalling,
        EnvironmentId::Interleaved,
        EnvironmentId::Collaboration,
        EnvironmentId::Simulation,
    ];

    /// Default maximum interaction depth.
    pub fn default_t_max(self) -> usize {
        match self {
            EnvironmentId::ToolCalling => 4,
            EnvironmentId::Interleaved => 6,
            EnvironmentId::Collaboration | EnvironmentId::Simulation => 12,
            EnvironmentId::Direct => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvironmentId::ToolCalling => "tool_calling",
            EnvironmentId::Interleaved => "interleaved",
            EnvironmentId::Collaboration => "collaboration",
            EnvironmentId::Simulation => "simulation",
            EnvironmentId::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tool_calling" => Some(EnvironmentId::ToolCalling),
            "interleaved" => Some(EnvironmentId::Interleaved),
            "collaboration" => Some(EnvironmentId::Collaboration),
            "simulation" => Some(EnvironmentId::Simulation),
            "direct" => Some(EnvironmentId::Direct),
            _ => None,
        }
    }
}

impl fmt::Display for EnvironmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Supervision mode of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Enhanced,
    Prospective,
    Retrospective,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Enhanced => "enhanced",
            Mode::Prospective => "prospective",
            Mode::Retrospective => "retrospective",
        }
    }

    /// Tier implied by the mode.
    pub fn tier(self) -> u8 {
        match self {
            Mode::Direct => 1,
            Mode::Enhanced => 2,
            Mode::Prospective | Mode::Retrospective => 3,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory {sample_id} violates invariants: {}", violations.join("; "))]
    InvariantViolation { sample_id: String, violations: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_id: String,
    pub environment_id: EnvironmentId,
    pub system_prompt: String,
    pub tool_schemas: Vec<ToolSchema>,
    pub turns: Vec<Turn>,
    pub images: Vec<String>,
    pub mode: Mode,
    pub final_answer: String,
    pub tier: Option<u8>,
    /// Provenance carried in the document metadata so a corpus line can be
    /// linted without the source dataset.
    pub dataset_id: Option<String>,
    pub gold_answer: Option<String>,
    pub category: Option<String>,
}

impl Trajectory {
    /// Number of `function_call` turns.
    pub fn depth(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::FunctionCall).count()
    }

    /// Parsed actions of every `function_call` turn, in order.
    pub fn actions(&self) -> Result<Vec<Action>, ActionParseError> {
        self.turns.iter().filter(|t| t.role == Role::FunctionCall).map(Turn::action).collect()
    }

    /// Ordered `(name, arguments)` pairs, ignoring reasoning.
    pub fn action_signature(&self) -> Vec<(String, serde_json::Value)> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::FunctionCall)
            .map(|t| match t.action() {
                Ok(a) => (a.name, serde_json::Value::Object(a.arguments)),
                Err(_) => (String::new(), serde_json::Value::String(t.content.clone())),
            })
            .collect()
    }

    pub fn last_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }

    /// Total characters of turn contents.
    pub fn content_chars(&self) -> usize {
        self.turns.iter().map(|t| t.content.chars().count()).sum()
    }

    /// Every invariant violation, empty when the trajectory is well formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sample_id.is_empty() {
            out.push("empty sample_id".to_string());
        }
        if let Err((idx, msg)) = check_grammar(self.turns.iter().map(|t| t.role)) {
            out.push(format!("turn {idx}: {msg}"));
        }
        let depth = self.depth();
        let cap = self.environment_id.default_t_max();
        if depth > cap {
            out.push(format!("depth {depth} exceeds {cap} for {}", self.environment_id));
        }
        let mut total = 0usize;
        let mut flat = Vec::new();
        for (i, turn) in self.turns.iter().enumerate() {
            let n = count_image_tokens(&turn.content);
            if n != turn.images.len() {
                out.push(format!("turn {i}: {n} image tokens but {} images", turn.images.len()));
            }
            total += n;
            flat.extend(turn.images.iter().cloned());
            match turn.role {
                Role::FunctionCall => {
                    if let Err(e) = turn.action() {
                        out.push(format!("turn {i}: {e}"));
                    }
                }
                Role::Observation if turn.content.contains("<think>") => {
                    out.push(format!("turn {i}: observation carries a think block"));
                }
                _ => {}
            }
        }
        if total != self.images.len() {
            out.push(format!("{total} image tokens but {} images", self.images.len()));
        } else if flat != self.images {
            out.push("per-turn images disagree with conversation images".to_string());
        }
        let mut names = BTreeSet::new();
        for schema in &self.tool_schemas {
            if !names.insert(schema.name.as_str()) {
                out.push(format!("duplicate tool schema {}", schema.name));
            }
        }
        if self.final_answer.trim().is_empty() {
            out.push("empty final_answer".to_string());
        } else if let Some(last) = self.turns.last() {
            if last.role == Role::Gpt && !last.content.to_lowercase().contains(&self.final_answer.to_lowercase()) {
                out.push("final gpt turn does not contain final_answer".to_string());
            }
        }
        if let Some(tier) = self.tier {
            if tier != self.mode.tier() {
                out.push(format!("tier {tier} inconsistent with mode {}", self.mode.as_str()));
            }
        }
        out
    }

    pub fn check(&self) -> Result<(), TrajectoryError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(TrajectoryError::InvariantViolation { sample_id: self.sample_id.clone(), violations })
        }
    }

    /// Rebuild per-turn image lists from placeholder counts, in conversation order.
    /// Returns false when the counts do not add up to the conversation images.
    pub fn align_images(&mut self) -> bool {
        let total: usize = self.turns.iter().map(|t| count_image_tokens(&t.content)).sum();
        if total != self.images.len() {
            return false;
        }
        let mut cursor = 0;
        for turn in &mut self.turns {
            let n = count_image_tokens(&turn.content);
            turn.images = self.images[cursor..cursor + n].to_vec();
            cursor += n;
        }
        true
    }
}

/// Check the `human → (function_call → observation)* → gpt` grammar.
/// On failure returns the offending turn index (the length for a missing final turn).
pub fn check_grammar(roles: impl IntoIterator<Item = Role>) -> Result<(), (usize, String)> {
    #[derive(PartialEq)]
    enum State {
        Start,
        Open,
        AfterCall,
        Done,
    }
    let mut state = State::Start;
    let mut len = 0;
    for (i, role) in roles.into_iter().enumerate() {
        len = i + 1;
        state = match (&state, role) {
            (State::Start, Role::Human) => State::Open,
            (State::Start, r) => return Err((i, format!("expected human, found {}", r.as_str()))),
            (State::Open, Role::FunctionCall) => State::AfterCall,
            (State::Open, Role::Gpt) => State::Done,
            (State::Open, r) => return Err((i, format!("expected function_call or gpt, found {}", r.as_str()))),
            (State::AfterCall, Role::Observation) => State::Open,
            (State::AfterCall, r) => return Err((i, format!("expected observation, found {}", r.as_str()))),
            (State::Done, r) => return Err((i, format!("{} after final gpt turn", r.as_str()))),
        };
    }
    if state == State::Done {
        Ok(())
    } else {
        Err((len, "conversation does not end with a gpt turn".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn call(name: &str) -> Turn {
        Turn::function_call("Need more evidence.", &Action::new(name, json!({"image_path": "a.png"})))
    }

    pub(crate) fn sample(turns: Vec<Turn>, images: Vec<String>) -> Trajectory {
        let mut t = Trajectory {
            sample_id: "s1".into(),
            environment_id: EnvironmentId::ToolCalling,
            system_prompt: "sys".into(),
            tool_schemas: vec![],
            turns,
            images,
            mode: Mode::Prospective,
            final_answer: "yes".into(),
            tier: Some(3),
            dataset_id: None,
            gold_answer: None,
            category: None,
        };
        t.align_images();
        t
    }

    #[test]
    fn depth_counts_calls_only() {
        let direct = sample(vec![Turn::human("q?", vec![]), Turn::gpt(None, "yes")], vec![]);
        assert_eq!(direct.depth(), 0);
        let mut turns = vec![Turn::human("q?", vec![])];
        for _ in 0..3 {
            turns.push(call("ChestXRayClassifier"));
            turns.push(Turn::observation("Effusion: 0.61", vec![]));
        }
        turns.push(Turn::gpt(Some("Done."), "[FINAL] yes"));
        assert_eq!(sample(turns, vec![]).depth(), 3);
    }

    #[test]
    fn appending_a_step_increments_depth_only() {
        let mut turns =
            vec![Turn::human("q?", vec![]), call("CheXagentVQA"), Turn::observation("no effusion seen", vec![])];
        turns.push(Turn::gpt(None, "[FINAL] yes"));
        let before = sample(turns.clone(), vec![]);
        let gpt = turns.pop().unwrap();
        turns.push(call("ChestXRayClassifier"));
        turns.push(Turn::observation("Effusion: 0.10", vec![]));
        turns.push(gpt);
        let after = sample(turns, vec![]);
        assert_eq!(after.depth(), before.depth() + 1);
        assert_eq!(after.final_answer, before.final_answer);
        assert_eq!(after.images, before.images);
    }

    #[test]
    fn grammar_errors_point_at_turn() {
        use Role::*;
        assert!(check_grammar([Human, Gpt]).is_ok());
        assert_eq!(check_grammar([Human, Observation, Gpt]).unwrap_err().0, 1);
        assert_eq!(check_grammar([Human, FunctionCall, Gpt]).unwrap_err().0, 2);
        assert_eq!(check_grammar([Human, FunctionCall, Observation]).unwrap_err().0, 3);
        assert_eq!(check_grammar([Gpt]).unwrap_err().0, 0);
        assert_eq!(check_grammar([Human, Gpt, Gpt]).unwrap_err().0, 2);
    }

    #[test]
    fn image_misalignment_is_a_violation() {
        let mut t = sample(vec![Turn::human("<image>\nq?", vec![]), Turn::gpt(None, "yes")], vec!["a.png".into()]);
        assert!(t.check().is_ok());
        t.images.push("b.png".into());
        assert!(t.check().is_err());
    }
}
