//! Canonical ShareGPT-style encoding.
//!
//! ```json
//! {"conversations":[{"from":"human","value":"<image>\n…"},…],
//!  "images":["…"],
//!  "metadata":{"environment_id":"…","final_answer":"…","mode":"…","sample_id":"…","tier":3},
//!  "system":"…",
//!  "tools":[{"description":"…","name":"…","parameters":{…}}]}
//! ```
//!
//! Keys are sorted and no insignificant whitespace is emitted.

use serde::Deserialize;
use serde_json::value::RawValue;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{
    check_grammar, count_image_tokens, EnvironmentId, Mode, Role, ToolSchema, Trajectory, TrajectoryError, Turn,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    MalformedJson,
    Schema,
    UnknownRole,
    Grammar,
    BadAction,
    ImageAlignment,
    Invariant,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} at byte {byte_offset}{}: {message}", turn_index.map(|i| format!(", turn {i}")).unwrap_or_default())]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub byte_offset: usize,
    pub turn_index: Option<usize>,
    pub message: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    conversations: Vec<TurnDoc>,
    #[serde(default)]
    images: Vec<String>,
    metadata: Meta,
    #[serde(default)]
    system: String,
    #[serde(default)]
    tools: Vec<ToolSchema>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnDoc {
    from: String,
    value: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    sample_id: String,
    environment_id: EnvironmentId,
    mode: Mode,
    final_answer: String,
    #[serde(default)]
    tier: Option<u8>,
    #[serde(default)]
    dataset_id: Option<String>,
    #[serde(default)]
    gold_answer: Option<String>,
    #[serde(default)]
    category: Option<String>,
}

#[derive(Deserialize)]
struct RawConversations<'a> {
    #[serde(borrow)]
    conversations: Vec<&'a RawValue>,
}

/// Encode a trajectory; fails if it violates any invariant.
pub fn serialize(t: &Trajectory) -> Result<String, TrajectoryError> {
    t.check()?;
    Ok(canonical_json(&to_value(t)))
}

pub(crate) fn to_value(t: &Trajectory) -> Value {
    let conversations = t
        .turns
        .iter()
        .map(|turn| {
            let mut m = Map::new();
            m.insert("from".into(), Value::String(turn.role.as_str().into()));
            m.insert("value".into(), Value::String(turn.content.clone()));
            Value::Object(m)
        })
        .collect();
    let mut meta = Map::new();
    meta.insert("sample_id".into(), Value::String(t.sample_id.clone()));
    meta.insert("environment_id".into(), Value::String(t.environment_id.as_str().into()));
    meta.insert("mode".into(), Value::String(t.mode.as_str().into()));
    meta.insert("final_answer".into(), Value::String(t.final_answer.clone()));
    if let Some(tier) = t.tier {
        meta.insert("tier".into(), Value::from(tier));
    }
    for (key, v) in [("dataset_id", &t.dataset_id), ("gold_answer", &t.gold_answer), ("category", &t.category)] {
        if let Some(v) = v {
            meta.insert(key.into(), Value::String(v.clone()));
        }
    }
    let mut doc = Map::new();
    doc.insert("conversations".into(), Value::Array(conversations));
    doc.insert("images".into(), Value::Array(t.images.iter().cloned().map(Value::String).collect()));
    doc.insert("metadata".into(), Value::Object(meta));
    doc.insert("system".into(), Value::String(t.system_prompt.clone()));
    doc.insert("tools".into(), serde_json::to_value(&t.tool_schemas).expect("tool schemas serialize"));
    Value::Object(doc)
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(v: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                let mut out = Map::new();
                for k in keys {
                    out.insert(k.clone(), sorted(&m[k]));
                }
                Value::Object(out)
            }
            Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(v)).expect("value serializes")
}

fn json_error(doc: &str, e: &serde_json::Error, kind: ParseErrorKind) -> ParseError {
    let offset = if e.line() == 0 {
        0
    } else {
        doc.split_inclusive('\n').take(e.line() - 1).map(str::len).sum::<usize>() + e.column().saturating_sub(1)
    };
    ParseError { kind, byte_offset: offset.min(doc.len()), turn_index: None, message: e.to_string() }
}

/// Decode the document shape only: roles must be known, but grammar, image
/// alignment and action JSON are not enforced. Used by the corpus linter.
pub fn parse_lenient(doc: &str) -> Result<Trajectory, ParseError> {
    let (t, _) = parse_shape(doc)?;
    Ok(t)
}

fn parse_shape(doc: &str) -> Result<(Trajectory, Vec<usize>), ParseError> {
    let _: Value = serde_json::from_str(doc).map_err(|e| json_error(doc, &e, ParseErrorKind::MalformedJson))?;
    let parsed: Doc = serde_json::from_str(doc).map_err(|e| json_error(doc, &e, ParseErrorKind::Schema))?;
    let raw: RawConversations = serde_json::from_str(doc).map_err(|e| json_error(doc, &e, ParseErrorKind::Schema))?;
    let offsets: Vec<usize> =
        raw.conversations.iter().map(|r| r.get().as_ptr() as usize - doc.as_ptr() as usize).collect();

    let mut turns = Vec::with_capacity(parsed.conversations.len());
    for (i, td) in parsed.conversations.into_iter().enumerate() {
        let role = Role::parse(&td.from).ok_or_else(|| ParseError {
            kind: ParseErrorKind::UnknownRole,
            byte_offset: offsets[i],
            turn_index: Some(i),
            message: format!("unknown role `{}`", td.from),
        })?;
        turns.push(Turn::new(role, td.value, Vec::new()));
    }
    let meta = parsed.metadata;
    let mut t = Trajectory {
        sample_id: meta.sample_id,
        environment_id: meta.environment_id,
        system_prompt: parsed.system,
        tool_schemas: parsed.tools,
        turns,
        images: parsed.images,
        mode: meta.mode,
        final_answer: meta.final_answer,
        tier: meta.tier,
        dataset_id: meta.dataset_id,
        gold_answer: meta.gold_answer,
        category: meta.category,
    };
    if !t.align_images() {
        // Best effort: hand out images in order until they run out.
        let mut cursor = 0;
        for turn in &mut t.turns {
            let n = count_image_tokens(&turn.content);
            let end = (cursor + n).min(t.images.len());
            turn.images = t.images[cursor..end].to_vec();
            cursor = end;
        }
    }
    Ok((t, offsets))
}

/// Decode a document, enforcing every trajectory invariant.
pub fn deserialize(doc: &str) -> Result<Trajectory, ParseError> {
    let (t, offsets) = parse_shape(doc)?;
    let at = |i: usize| offsets.get(i).copied().unwrap_or(doc.len());

    if let Err((i, msg)) = check_grammar(t.turns.iter().map(|x| x.role)) {
        return Err(ParseError {
            kind: ParseErrorKind::Grammar,
            byte_offset: at(i),
            turn_index: Some(i),
            message: msg,
        });
    }
    for (i, turn) in t.turns.iter().enumerate() {
        if turn.role == Role::FunctionCall {
            if let Err(e) = turn.action() {
                return Err(ParseError {
                    kind: ParseErrorKind::BadAction,
                    byte_offset: at(i),
                    turn_index: Some(i),
                    message: e.to_string(),
                });
            }
        }
    }
    let mut seen = 0;
    for (i, turn) in t.turns.iter().enumerate() {
        seen += count_image_tokens(&turn.content);
        if seen > t.images.len() {
            return Err(ParseError {
                kind: ParseErrorKind::ImageAlignment,
                byte_offset: at(i),
                turn_index: Some(i),
                message: format!("more <image> tokens than the {} listed images", t.images.len()),
            });
        }
    }
    if seen != t.images.len() {
        return Err(ParseError {
            kind: ParseErrorKind::ImageAlignment,
            byte_offset: 0,
            turn_index: None,
            message: format!("{seen} <image> tokens but {} images", t.images.len()),
        });
    }
    let violations = t.violations();
    if !violations.is_empty() {
        return Err(ParseError {
            kind: ParseErrorKind::Invariant,
            byte_offset: 0,
            turn_index: None,
            message: violations.join("; "),
        });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Action;
    use serde_json::json;

    fn direct() -> Trajectory {
        Trajectory {
            sample_id: "q1".into(),
            environment_id: EnvironmentId::Direct,
            system_prompt: "Answer the question.".into(),
            tool_schemas: vec![],
            turns: vec![Turn::human("Is there an effusion?", vec![]), Turn::gpt(Some("Blunted angle."), "yes")],
            images: vec![],
            mode: Mode::Direct,
            final_answer: "yes".into(),
            tier: Some(1),
            dataset_id: None,
            gold_answer: None,
            category: None,
        }
    }

    #[test]
    fn minimal_direct_document() {
        let doc = serialize(&direct()).unwrap();
        let v: Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(v["conversations"].as_array().unwrap().len(), 2);
        assert!(v["images"].as_array().unwrap().is_empty());
        assert!(!doc.contains('\n') || doc.contains("\\n"));
        assert_eq!(deserialize(&doc).unwrap(), direct());
    }

    #[test]
    fn two_calls_expand_to_six_entries() {
        let mut t = direct();
        t.environment_id = EnvironmentId::ToolCalling;
        t.mode = Mode::Prospective;
        t.tier = Some(3);
        let gpt = Turn::gpt(Some("Both agree."), "[FINAL] yes");
        t.turns.truncate(1);
        for tool in ["ChestXRayClassifier", "ChestXRayReportGenerator"] {
            t.turns.push(Turn::function_call("Check.", &Action::new(tool, json!({"image_path": "x.png"}))));
            t.turns.push(Turn::observation("pleural effusion present", vec![]));
        }
        t.turns.push(gpt);
        let doc = serialize(&t).unwrap();
        let v: Value = serde_json::from_str(&doc).unwrap();
        let roles: Vec<&str> =
            v["conversations"].as_array().unwrap().iter().map(|c| c["from"].as_str().unwrap()).collect();
        assert_eq!(roles, ["human", "function_call", "observation", "function_call", "observation", "gpt"]);
    }

    #[test]
    fn observation_first_is_grammar_error_at_turn_one() {
        let doc = r#"{"conversations":[{"from":"human","value":"q"},{"from":"observation","value":"o"},{"from":"gpt","value":"a"}],"images":[],"metadata":{"environment_id":"tool_calling","final_answer":"a","mode":"prospective","sample_id":"x"},"system":"","tools":[]}"#;
        let err = deserialize(doc).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Grammar);
        assert_eq!(err.turn_index, Some(1));
        assert_eq!(&doc[err.byte_offset..err.byte_offset + 8], r#"{"from":"#);
    }

    #[test]
    fn three_tokens_two_images_is_alignment_error() {
        let doc = r#"{"conversations":[{"from":"human","value":"<image><image><image> q"},{"from":"gpt","value":"a"}],"images":["1","2"],"metadata":{"environment_id":"direct","final_answer":"a","mode":"direct","sample_id":"x"},"system":"","tools":[]}"#;
        assert_eq!(deserialize(doc).unwrap_err().kind, ParseErrorKind::ImageAlignment);
        assert!(parse_lenient(doc).is_ok());
    }

    #[test]
    fn unknown_role_and_bad_json() {
        let doc = r#"{"conversations":[{"from":"system","value":"q"}],"images":[],"metadata":{"environment_id":"direct","final_answer":"a","mode":"direct","sample_id":"x"}}"#;
        let err = deserialize(doc).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownRole);
        assert_eq!(err.turn_index, Some(0));
        let err = deserialize("{\"conversations\": [").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::MalformedJson);
    }

    #[test]
    fn bad_action_json_is_reported() {
        let doc = r#"{"conversations":[{"from":"human","value":"q"},{"from":"function_call","value":"<think>t.</think>\nnot json"},{"from":"observation","value":"o"},{"from":"gpt","value":"a"}],"images":[],"metadata":{"environment_id":"tool_calling","final_answer":"a","mode":"prospective","sample_id":"x"}}"#;
        let err = deserialize(doc).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::BadAction);
        assert_eq!(err.turn_index, Some(1));
    }

    #[test]
    fn serialize_rejects_invalid() {
        let mut t = direct();
        t.turns.pop();
        assert!(serialize(&t).is_err());
    }

    proptest::proptest! {
        #[test]
        fn tool_call_chains_round_trip(
            question in "[a-zA-Z ?\"\\\n]{1,40}",
            calls in proptest::collection::vec(("[a-z]{1,10}", "[ -~]{0,30}"), 0..4),
            answer in "[a-z]{1,12}",
        ) {
            let mut t = direct();
            t.environment_id = EnvironmentId::ToolCalling;
            t.mode = Mode::Prospective;
            t.tier = Some(3);
            t.turns = vec![Turn::human(&question, vec![])];
            for (arg, obs) in &calls {
                t.turns.push(Turn::function_call("Look.", &Action::new("ChestXRayClassifier", json!({"image_path": arg}))));
                t.turns.push(Turn::observation(obs, vec![]));
            }
            t.turns.push(Turn::gpt(Some("Done."), &format!("[FINAL] {answer}")));
            t.final_answer = answer;
            let doc = serialize(&t).unwrap();
            let back = deserialize(&doc).unwrap();
            proptest::prop_assert_eq!(&back, &t);
            proptest::prop_assert_eq!(serialize(&back).unwrap(), doc);
        }
    }
}
