use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Message, PolicyError, PolicyHandle};
use crate::trajectory::{canonical_json, Action};

pub const RECAP_SYSTEM_PROMPT: &str = "\
You review a finished agent episode whose final answer is known to be correct. \
Write a hindsight summary of the evidence, not a plan.

Return one JSON object with a \"recap\" list, one entry per action in order, \
then one entry for Terminate.

Tool entry:
{\"step\": <int>, \"tool\": \"<name>\", \"why\": \"<reason for the call>\", \
\"got\": \"<finding>\", \"update\": \"increase\" | \"decrease\" | \"no_change\", \
\"evidence\": \"<observation text supporting the finding>\", \
\"inference\": \"<short inference>\", \"confidence\": <int 0-100>}

Terminate entry:
{\"step\": <int>, \"tool\": \"Terminate\", \"why\": \"<why the answer is now supported>\"}

Ground evidence in the observations. Leave out hypotheses and abandoned branches. \
With no actions, return exactly one Terminate entry.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Update {
    Increase,
    Decrease,
    NoChange,
}

/// Hindsight record for one tool action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecapStep {
    pub step: i64,
    pub tool: String,
    pub why: String,
    pub got: String,
    pub update: Update,
    pub evidence: String,
    pub inference: String,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecapEntry {
    Tool(RecapStep),
    Terminate { step: i64, why: String },
}

impl RecapEntry {
    pub fn tool(&self) -> &str {
        match self {
            RecapEntry::Tool(s) => &s.tool,
            RecapEntry::Terminate { .. } => "Terminate",
        }
    }

    pub fn step(&self) -> i64 {
        match self {
            RecapEntry::Tool(s) => s.step,
            RecapEntry::Terminate { step, .. } => *step,
        }
    }

    pub fn why(&self) -> &str {
        match self {
            RecapEntry::Tool(s) => &s.why,
            RecapEntry::Terminate { why, .. } => why,
        }
    }

    fn word_count(&self) -> usize {
        match self {
            RecapEntry::Tool(s) => {
                [&s.why, &s.got, &s.evidence, &s.inference].iter().map(|t| super::word_count(t)).sum()
            }
            RecapEntry::Terminate { why, .. } => super::word_count(why),
        }
    }
}

/// Retrospective rewrite of an episode.
///
/// `actions` are the input actions with only their `think` replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct Recap {
    pub entries: Vec<RecapEntry>,
    pub actions: Vec<Action>,
    pub final_think: String,
}

/// Length gate for discarding over-simplified or over-complicated recaps.
/// Counts words across every entry's free-text fields.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecapFilter {
    #[serde(default)]
    pub min_words: Option<usize>,
    #[serde(default)]
    pub max_words: Option<usize>,
}

impl RecapFilter {
    pub fn check(&self, entries: &[RecapEntry]) -> Result<(), PolicyError> {
        let words: usize = entries.iter().map(RecapEntry::word_count).sum();
        if let Some(min) = self.min_words {
            if words < min {
                return Err(PolicyError::RecapInvalid(format!("filtered: {words} words below {min}")));
            }
        }
        if let Some(max) = self.max_words {
            if words > max {
                return Err(PolicyError::RecapInvalid(format!("filtered: {words} words above {max}")));
            }
        }
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> PolicyError {
    PolicyError::RecapInvalid(msg.into())
}

fn text_field(obj: &Map<String, Value>, key: &str, idx: usize, required: bool) -> Result<String, PolicyError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        None if !required => Ok(String::new()),
        None => Err(invalid(format!("entry {idx}: missing `{key}`"))),
        Some(_) => Err(invalid(format!("entry {idx}: `{key}` is not a string"))),
    }
}

fn parse_entry(v: &Value, idx: usize, terminal: bool) -> Result<RecapEntry, PolicyError> {
    let obj = v.as_object().ok_or_else(|| invalid(format!("entry {idx} is not an object")))?;
    let step = obj
        .get("step")
        .and_then(Value::as_i64)
        .ok_or_else(|| invalid(format!("entry {idx}: `step` must be an integer")))?;
    let tool = text_field(obj, "tool", idx, true)?;
    let why = text_field(obj, "why", idx, true)?;
    if why.trim().is_empty() {
        return Err(invalid(format!("entry {idx}: empty `why`")));
    }
    if terminal {
        if tool != "Terminate" {
            return Err(invalid(format!("last entry is `{tool}`, expected Terminate")));
        }
        if let Some(extra) = obj.keys().find(|k| !matches!(k.as_str(), "step" | "tool" | "why")) {
            return Err(invalid(format!("Terminate entry carries `{extra}`")));
        }
        return Ok(RecapEntry::Terminate { step, why });
    }
    const KNOWN: [&str; 8] = ["step", "tool", "why", "got", "update", "evidence", "inference", "confidence"];
    if let Some(extra) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(invalid(format!("entry {idx}: unknown field `{extra}`")));
    }
    let update = match obj.get("update").and_then(Value::as_str) {
        Some("increase") => Update::Increase,
        Some("decrease") => Update::Decrease,
        Some("no_change") => Update::NoChange,
        other => return Err(invalid(format!("entry {idx}: bad `update` {other:?}"))),
    };
    let confidence = match obj.get("confidence") {
        Some(Value::Number(n)) => match n.as_i64() {
            Some(c @ 0..=100) => c as u8,
            _ => return Err(invalid(format!("entry {idx}: confidence {n} outside 0-100"))),
        },
        _ => return Err(invalid(format!("entry {idx}: `confidence` must be an integer"))),
    };
    Ok(RecapEntry::Tool(RecapStep {
        step,
        tool,
        why,
        got: text_field(obj, "got", idx, true)?,
        update,
        evidence: text_field(obj, "evidence", idx, true)?,
        inference: text_field(obj, "inference", idx, false)?,
        confidence,
    }))
}

/// Validate a recap reply against the actions it must describe.
///
/// Accepts a bare JSON list or an object with a `recap` list, optionally
/// wrapped in a markdown code fence.
pub fn validate_recap(reply: &str, actions: &[Action]) -> Result<Vec<RecapEntry>, PolicyError> {
    let text = strip_fence(reply.trim());
    let value: Value = serde_json::from_str(text).map_err(|e| invalid(format!("not JSON: {e}")))?;
    let list = match &value {
        Value::Array(a) => a,
        Value::Object(o) => {
            o.get("recap").and_then(Value::as_array).ok_or_else(|| invalid("object has no `recap` list"))?
        }
        _ => return Err(invalid("expected a list or an object")),
    };
    if list.len() != actions.len() + 1 {
        return Err(invalid(format!("{} entries for {} actions", list.len(), actions.len())));
    }
    let mut entries = Vec::with_capacity(list.len());
    for (i, v) in list.iter().enumerate() {
        let entry = parse_entry(v, i, i == actions.len())?;
        if let Some(action) = actions.get(i) {
            if entry.tool() != action.name {
                return Err(invalid(format!("entry {i} names `{}` but action {i} is `{}`", entry.tool(), action.name)));
            }
        }
        if let Some(prev) = entries.last().map(RecapEntry::step) {
            if entry.step() != prev + 1 {
                return Err(invalid(format!("entry {i}: step {} does not follow {prev}", entry.step())));
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

fn strip_fence(text: &str) -> &str {
    let Some(rest) = text.strip_prefix("```") else { return text };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Join fragments into sentences that each end in terminal punctuation.
fn sentences(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| if p.ends_with(['.', '!', '?']) { p.to_string() } else { format!("{p}.") })
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_request(question: &str, answer: &str, actions: &[Action], observations: &[String]) -> String {
    let mut out = format!("Question: {question}\nCorrect answer: {answer}\n");
    if actions.is_empty() {
        out.push_str("No tools were called.\n");
    }
    for (i, (a, o)) in actions.iter().zip(observations).enumerate() {
        out.push_str(&format!("\nStep {i} action: {}\nStep {i} observation: {o}\n", a.to_json()));
    }
    out.push_str(&format!("\nStep {} action: Terminate\n", actions.len()));
    out
}

/// Re-narrate an episode in hindsight.
///
/// The returned actions are clones of the inputs with new reasoning; names and
/// arguments are never taken from the backend.
pub fn recap(
    h: &PolicyHandle,
    question: &str,
    answer: &str,
    actions: &[Action],
    observations: &[String],
    filter: &RecapFilter,
) -> Result<Recap, PolicyError> {
    if actions.len() != observations.len() {
        return Err(PolicyError::InvalidRequest(format!(
            "{} actions but {} observations",
            actions.len(),
            observations.len()
        )));
    }
    let req = h
        .request(RECAP_SYSTEM_PROMPT, vec![Message::human(render_request(question, answer, actions, observations))])
        .with_seed(h.seed);
    let resp = h.complete(&req)?;
    let entries = validate_recap(&resp.content, actions)?;
    filter.check(&entries)?;

    let mut rewritten = Vec::with_capacity(actions.len());
    let mut carry: (&str, &str) = ("", "");
    for (action, entry) in actions.iter().zip(&entries) {
        let think = sentences(&[carry.0, carry.1, entry.why()]);
        rewritten.push(action.clone().with_think(think));
        if let RecapEntry::Tool(s) = entry {
            carry = (&s.got, &s.inference);
        }
    }
    let last = entries.last().expect("validated recap has a Terminate entry");
    let final_think = sentences(&[carry.0, carry.1, last.why()]);
    Ok(Recap { entries, actions: rewritten, final_think })
}

/// Canonical JSON of recap entries, as a recap backend would emit them.
pub fn recap_json(entries: &[RecapEntry]) -> String {
    let list = entries
        .iter()
        .map(|e| match e {
            RecapEntry::Tool(s) => serde_json::to_value(s).expect("recap step serializes"),
            RecapEntry::Terminate { step, why } => {
                serde_json::json!({"step": step, "tool": "Terminate", "why": why})
            }
        })
        .collect();
    canonical_json(&serde_json::json!({ "recap": Value::Array(list) }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyRole, ScriptedPolicy};
    use serde_json::json;

    fn step(i: i64, tool: &str, confidence: i64) -> Value {
        json!({"step": i, "tool": tool, "why": "check the lungs", "got": "opacity", "update": "increase",
               "evidence": "report mentions opacity", "inference": "consolidation likely", "confidence": confidence})
    }

    fn handle(reply: Value) -> PolicyHandle {
        PolicyHandle::scripted(PolicyRole::Recap, ScriptedPolicy::new().with_default(reply.to_string()))
    }

    fn actions() -> Vec<Action> {
        vec![
            Action::new("ChestXRayClassifier", json!({"image_path": "a.png"})).with_think("hmm, maybe"),
            Action::new("ChestXRayReportGenerator", json!({"image_path": "a.png"})),
        ]
    }

    fn obs() -> Vec<String> {
        vec!["Consolidation: 0.72".into(), "Right lower lobe opacity.".into()]
    }

    #[test]
    fn two_actions_give_three_entries() {
        let reply = json!({"recap": [step(1, "ChestXRayClassifier", 70), step(2, "ChestXRayReportGenerator", 90),
                                     {"step": 3, "tool": "Terminate", "why": "Findings agree"}]});
        let r = recap(&handle(reply), "q", "pneumonia", &actions(), &obs(), &RecapFilter::default()).unwrap();
        assert_eq!(r.entries.len(), 3);
        assert_eq!(r.actions.len(), 2);
        for (a, b) in r.actions.iter().zip(actions()) {
            assert_eq!((&a.name, &a.arguments), (&b.name, &b.arguments));
        }
        assert_eq!(r.actions[0].think, "check the lungs.");
        assert_eq!(r.final_think, "opacity. consolidation likely. Findings agree.");
    }

    #[test]
    fn no_actions_needs_exactly_one_terminate() {
        let reply = json!([{"step": 0, "tool": "Terminate", "why": "Answerable from the question."}]);
        let r = recap(&handle(reply), "q", "yes", &[], &[], &RecapFilter::default()).unwrap();
        assert_eq!(r.entries, vec![RecapEntry::Terminate { step: 0, why: "Answerable from the question.".into() }]);
        let two = json!([step(0, "X", 5), {"step": 1, "tool": "Terminate", "why": "w"}]);
        assert!(matches!(
            recap(&handle(two), "q", "yes", &[], &[], &RecapFilter::default()),
            Err(PolicyError::RecapInvalid(_))
        ));
    }

    #[test]
    fn confidence_out_of_range_is_invalid() {
        let reply = json!([step(1, "ChestXRayClassifier", 140), step(2, "ChestXRayReportGenerator", 90),
                           {"step": 3, "tool": "Terminate", "why": "w"}]);
        let err = recap(&handle(reply), "q", "a", &actions(), &obs(), &RecapFilter::default()).unwrap_err();
        assert!(matches!(err, PolicyError::RecapInvalid(m) if m.contains("140")));
    }

    #[test]
    fn schema_violations() {
        let a = actions();
        let term = json!({"step": 3, "tool": "Terminate", "why": "w"});
        let cases = [
            json!([step(1, "Wrong", 1), step(2, "ChestXRayReportGenerator", 1), term]),
            json!([step(1, "ChestXRayClassifier", 1), step(3, "ChestXRayReportGenerator", 1), term]),
            json!([step(1, "ChestXRayClassifier", 1), step(2, "ChestXRayReportGenerator", 1),
                   {"step": 3, "tool": "Terminate", "why": "w", "confidence": 10}]),
            json!([step(1, "ChestXRayClassifier", 1), step(2, "ChestXRayReportGenerator", 1)]),
        ];
        for c in cases {
            assert!(validate_recap(&c.to_string(), &a).is_err(), "{c}");
        }
        let mut bad_update = step(1, "ChestXRayClassifier", 1);
        bad_update["update"] = json!("up");
        assert!(
            validate_recap(&json!([bad_update, step(2, "ChestXRayReportGenerator", 1), term]).to_string(), &a).is_err()
        );
    }

    #[test]
    fn fenced_reply_and_round_trip() {
        let entries = vec![RecapEntry::Terminate { step: 1, why: "done".into() }];
        let fenced = format!("```json\n{}\n```", recap_json(&entries));
        assert_eq!(validate_recap(&fenced, &[]).unwrap(), entries);
    }

    #[test]
    fn filter_bounds_words() {
        let entries = vec![RecapEntry::Terminate { step: 0, why: "one two three".into() }];
        assert!(RecapFilter { min_words: Some(4), max_words: None }.check(&entries).is_err());
        assert!(RecapFilter { min_words: None, max_words: Some(2) }.check(&entries).is_err());
        assert!(RecapFilter { min_words: Some(3), max_words: Some(3) }.check(&entries).is_ok());
    }
}
