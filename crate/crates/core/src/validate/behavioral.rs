use std::collections::BTreeSet;

use crate::trajectory::{Role, Trajectory};

use super::lexicon::Lexicon;
use super::{LintReport, RuleId, Violation};

/// Minimum meaningful characters per turn.
pub const MIN_MEANINGFUL_CHARS: usize = 10;

/// Characters left after dropping whitespace, markdown punctuation and
/// JSON syntax.
pub fn meaningful_chars(text: &str) -> usize {
    text.chars()
        .filter(|c| {
            !c.is_whitespace()
                && !matches!(c, '#' | '*' | '_' | '`' | '>' | '-' | '|' | '~' | '{' | '}' | '[' | ']' | '"' | ':' | ',')
        })
        .count()
}

/// Brackets and braces close in order, ignoring string contents.
pub(crate) fn braces_balanced(text: &str) -> bool {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_string {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => stack.push(c),
            '}' if stack.pop() != Some('{') => return false,
            ']' if stack.pop() != Some('[') => return false,
            _ => {}
        }
    }
    stack.is_empty() && !in_string
}

fn ends_a_sentence(text: &str) -> bool {
    let t = text.trim_end().trim_end_matches([')', '"', '\'', '*', '`', ']']);
    t.ends_with(['.', '!', '?'])
}

/// Semantic quality: ungrounded medical terms in reasoning (flag), repeated
/// calls, truncation signatures, near-empty turns and silent calls.
pub fn behavioral_check(t: &Trajectory, lexicon: &Lexicon) -> LintReport {
    let mut out = Vec::new();

    let grounded: String = t
        .turns
        .iter()
        .filter(|x| matches!(x.role, Role::Human | Role::Observation))
        .map(|x| x.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let available: BTreeSet<&str> = lexicon.find(&grounded).into_iter().collect();

    let mut previous_call: Option<(String, String)> = None;
    for (i, turn) in t.turns.iter().enumerate() {
        let generated = matches!(turn.role, Role::FunctionCall | Role::Gpt);
        let think = turn.think.as_deref().map(str::trim).unwrap_or("");

        if generated && !think.is_empty() {
            for term in lexicon.find(think) {
                if !available.contains(term) {
                    out.push(Violation::new(
                        RuleId::HallucinationKeyword,
                        Some(i),
                        format!("`{term}` appears in reasoning but in no input or observation"),
                    ));
                }
            }
        }

        if turn.role == Role::FunctionCall {
            let signature = match turn.action() {
                Ok(a) => (a.name, serde_json::Value::Object(a.arguments).to_string()),
                Err(_) => (String::new(), turn.body().trim().to_string()),
            };
            if previous_call.as_ref() == Some(&signature) {
                out.push(Violation::new(
                    RuleId::RepetitionLoop,
                    Some(i),
                    format!("`{}` repeated with identical arguments", signature.0),
                ));
            }
            previous_call = Some(signature);
            if think.is_empty() {
                out.push(Violation::new(RuleId::MissingThink, Some(i), "function_call without reasoning"));
            }
        }

        if generated {
            if turn.content.matches("```").count() % 2 == 1 {
                out.push(Violation::new(RuleId::Truncation, Some(i), "unclosed code fence"));
            }
            let body = turn.body().trim();
            if body.starts_with(['{', '[']) && !braces_balanced(body) {
                out.push(Violation::new(RuleId::Truncation, Some(i), "unbalanced JSON"));
            }
            if !think.is_empty() && !ends_a_sentence(think) {
                out.push(Violation::new(RuleId::Truncation, Some(i), "reasoning ends mid-sentence"));
            }
        }

        let short = meaningful_chars(&turn.content) < MIN_MEANINGFUL_CHARS;
        // A bare closed-form answer in the last turn is the answer, not filler.
        let bare_answer = i + 1 == t.turns.len()
            && turn.role == Role::Gpt
            && crate::eval::normalize(turn.body()) == crate::eval::normalize(&t.final_answer);
        if short && !bare_answer {
            out.push(Violation::new(
                RuleId::ShortContent,
                Some(i),
                format!("fewer than {MIN_MEANINGFUL_CHARS} meaningful characters"),
            ));
        }
    }

    LintReport::new(&t.sample_id, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balance() {
        assert!(braces_balanced(r#"{"a": ["}", 1]}"#));
        assert!(!braces_balanced(r#"{"a": [1}"#));
        assert!(!braces_balanced(r#"{"a": "x"#));
        assert!(braces_balanced("no json"));
    }

    #[test]
    fn meaningful() {
        assert_eq!(meaningful_chars("**ok** {}"), 2);
        assert_eq!(meaningful_chars("Heart rate 88 bpm."), 15);
    }

    #[test]
    fn sentence_ends() {
        assert!(ends_a_sentence("Done."));
        assert!(ends_a_sentence("Is it (left?)"));
        assert!(!ends_a_sentence("I will check the"));
    }
}
