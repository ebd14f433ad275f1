use crate::env::{EnvironmentSpec, TerminalRule, TERMINATE};
use crate::eval::Matcher;
use crate::trajectory::{check_grammar, count_image_tokens, split_think, Action, Role, Trajectory};

use super::behavioral::braces_balanced;
use super::{LintReport, RuleId, Violation};

/// Character budget for a whole trajectory.
pub const MAX_TRAJECTORY_CHARS: usize = 10_000;

const FINAL_MARKER: &str = "[FINAL]";

/// Turn characters with inline base64 payloads removed.
fn counted_chars(content: &str) -> usize {
    let mut total = 0;
    let mut rest = content;
    while let Some(start) = rest.find("data:image/") {
        total += rest[..start].chars().count();
        let tail = &rest[start..];
        let payload = match tail.find(";base64,") {
            Some(p) => p + ";base64,".len(),
            None => {
                total += tail.chars().count();
                return total;
            }
        };
        total += payload;
        let end = tail[payload..]
            .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '+' | '/' | '=')))
            .map_or(tail.len(), |e| payload + e);
        rest = &tail[end..];
    }
    total + rest.chars().count()
}

fn terminated(spec: &EnvironmentSpec, body: &str) -> bool {
    match spec.terminal_rule {
        TerminalRule::FinalMarker => {
            body.rfind(FINAL_MARKER).is_some_and(|i| !body[i + FINAL_MARKER.len()..].trim().is_empty())
        }
        TerminalRule::TerminateAction { argument } => Action::from_json(body)
            .is_ok_and(|a| a.name == TERMINATE && a.arg_str(argument).is_some_and(|v| !v.trim().is_empty())),
        TerminalRule::Moderator | TerminalRule::DirectAnswer => !body.trim().is_empty(),
    }
}

/// Format compliance: correctness against the gold answer, turn grammar,
/// tool references, termination, image alignment, length and depth.
pub fn structural_check(t: &Trajectory, spec: &EnvironmentSpec, matcher: &Matcher, gold: Option<&str>) -> LintReport {
    structural_check_bounded(t, spec, matcher, gold, MAX_TRAJECTORY_CHARS)
}

/// [`structural_check`] with a custom character budget.
pub fn structural_check_bounded(
    t: &Trajectory,
    spec: &EnvironmentSpec,
    matcher: &Matcher,
    gold: Option<&str>,
    length_bound: usize,
) -> LintReport {
    let mut out = Vec::new();

    if let Some(gold) = gold.or(t.gold_answer.as_deref()) {
        if !matcher.matches(&t.final_answer, gold) {
            out.push(Violation::new(
                RuleId::Correctness,
                None,
                format!("answer `{}` does not match gold `{gold}`", t.final_answer),
            ));
        }
    }

    if let Err((i, msg)) = check_grammar(t.turns.iter().map(|x| x.role)) {
        out.push(Violation::new(RuleId::TurnGrammar, Some(i), msg));
    }

    for (i, turn) in t.turns.iter().enumerate() {
        if turn.role != Role::FunctionCall {
            continue;
        }
        let body = turn.body();
        // Cut-off JSON is the truncation rule's finding.
        if !braces_balanced(body) {
            continue;
        }
        match Action::from_json(body) {
            Err(e) => out.push(Violation::new(RuleId::BadArguments, Some(i), e.to_string())),
            Ok(a) => match spec.schema(&a.name) {
                None => out.push(Violation::new(
                    RuleId::UnknownTool,
                    Some(i),
                    format!("`{}` is not a tool of {}", a.name, spec.environment_id),
                )),
                Some(schema) => {
                    if let Err(e) = schema.validate(&a.arguments) {
                        out.push(Violation::new(RuleId::BadArguments, Some(i), e.to_string()));
                    }
                }
            },
        }
    }

    match t.turns.last() {
        Some(last) if last.role == Role::Gpt && !terminated(spec, split_think(&last.content).1) => {
            out.push(Violation::new(
                RuleId::MissingTerminate,
                Some(t.turns.len() - 1),
                format!("final turn lacks the {} termination", spec.environment_id),
            ));
        }
        // A missing final gpt turn is a grammar failure.
        _ => {}
    }

    let tokens: usize = t.turns.iter().map(|x| count_image_tokens(&x.content)).sum();
    if tokens != t.images.len() {
        out.push(Violation::new(
            RuleId::ImageAlignment,
            None,
            format!("{tokens} <image> tokens but {} images", t.images.len()),
        ));
    }

    let chars: usize = t.turns.iter().map(|x| counted_chars(&x.content)).sum();
    if chars > length_bound {
        out.push(Violation::new(RuleId::LengthBound, None, format!("{chars} characters exceed {length_bound}")));
    }

    let depth = t.depth();
    if depth > spec.t_max {
        out.push(Violation::new(
            RuleId::DepthBound,
            None,
            format!("{depth} function calls exceed {} for {}", spec.t_max, spec.environment_id),
        ));
    }

    LintReport::new(&t.sample_id, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base64_payloads_are_not_counted() {
        assert_eq!(counted_chars("ab data:image/png;base64,QUJD+/== cd"), "ab data:image/png;base64, cd".len());
        assert_eq!(counted_chars("plain"), 5);
        assert_eq!(counted_chars("data:image/png"), 14);
    }
}
