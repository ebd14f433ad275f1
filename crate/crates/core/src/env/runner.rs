use std::time::Instant;

use serde_json::Value;

use super::episode::{answer_line, reset, step, EpisodeState, StepOutcome};
use super::prompts::FORCE_ANSWER;
use super::spec::{EnvironmentSpec, TerminalRule, TERMINATE};
use super::{collaboration, EnvError, Environment, EpisodeOptions, Sample};
use crate::policy::{Message, PolicyHandle, PolicyRequest, PolicyResponse, Usage};
use crate::seed::attempt_seed;
use crate::trajectory::{split_think, Action, EnvironmentId, Mode, Role, Trajectory};

/// Decoding parameters of one episode attempt (1-based index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attempt {
    pub index: u32,
    pub seed: u64,
    pub temperature: f64,
}

impl Attempt {
    /// Seed from `(sample_id, index)`; temperature from the schedule, the last
    /// entry repeating.
    pub fn new(sample_id: &str, index: u32, schedule: &[f64]) -> Self {
        let slot = (index.max(1) as usize - 1).min(schedule.len().saturating_sub(1));
        Attempt { index, seed: attempt_seed(sample_id, index), temperature: schedule.get(slot).copied().unwrap_or(0.2) }
    }

    pub fn single(seed: u64) -> Self {
        Attempt { index: 1, seed, temperature: 0.2 }
    }
}

/// The strategy implied by a policy's first generated move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Direct,
    Agentic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Answered,
    /// Answered after hitting the depth cap.
    Forced,
    Failed(String),
}

/// A finished episode with its accounting.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub state: EpisodeState,
    pub outcome: Outcome,
    pub first_move: Option<Strategy>,
    pub usage: Usage,
    pub latency_ms: f64,
    pub policy_calls: usize,
}

impl EpisodeResult {
    pub fn final_answer(&self) -> Option<&str> {
        match self.outcome {
            Outcome::Failed(_) => None,
            _ => self.state.final_answer.as_deref(),
        }
    }

    pub fn depth(&self) -> usize {
        self.state.depth()
    }

    pub fn forced(&self) -> bool {
        self.state.forced
    }

    pub fn failure(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Failed(r) => Some(r),
            _ => None,
        }
    }

    pub fn trajectory(&self, mode: Mode) -> Result<Trajectory, EnvError> {
        if let Outcome::Failed(reason) = &self.outcome {
            return Err(EnvError::ProtocolViolation(reason.clone()));
        }
        self.state.to_trajectory(mode)
    }
}

/// A parsed policy reply.
#[derive(Debug, Clone, PartialEq)]
pub enum Move {
    Act(Action),
    Final { think: Option<String>, body: String },
    Invalid(String),
}

fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn parse_action(body: &str, think: Option<String>) -> Move {
    let text = strip_fence(body);
    let candidate = match (text.find('{'), text.rfind('}')) {
        (Some(a), Some(b)) if b > a => &text[a..=b],
        _ => return Move::Invalid("no JSON action".into()),
    };
    let value: Value = match serde_json::from_str(candidate) {
        Ok(v) => v,
        Err(e) => return Move::Invalid(format!("action JSON: {e}")),
    };
    let (think, action_value) = match value.get("actions") {
        Some(Value::Array(list)) => {
            let thought = value.get("thought").and_then(Value::as_str).map(str::to_string);
            match list.first() {
                Some(first) => (think.or(thought), first.clone()),
                None => return Move::Invalid("empty action list".into()),
            }
        }
        _ => (think, value),
    };
    match Action::from_json(&action_value.to_string()) {
        Ok(a) => Move::Act(a.with_think(think.unwrap_or_default())),
        Err(e) => Move::Invalid(e.to_string()),
    }
}

/// Interpret a reply under an environment's terminal rule.
pub fn parse_move(rule: TerminalRule, content: &str) -> Move {
    let (think, body) = split_think(content);
    let think = think.map(|t| t.trim().to_string());
    match rule {
        TerminalRule::FinalMarker if body.contains("[FINAL]") => Move::Final { think, body: body.to_string() },
        TerminalRule::FinalMarker | TerminalRule::TerminateAction { .. } => parse_action(body, think),
        TerminalRule::Moderator | TerminalRule::DirectAnswer => Move::Final { think, body: body.to_string() },
    }
}

/// The answer a direct reply commits to.
pub fn direct_answer(content: &str) -> Option<String> {
    answer_line(split_think(content).1)
}

pub(crate) fn messages(state: &EpisodeState) -> Vec<Message> {
    state
        .turns
        .iter()
        .map(|t| Message {
            role: if t.role == Role::FunctionCall { Role::Gpt } else { t.role },
            content: t.content.clone(),
            images: t.images.clone(),
        })
        .collect()
}

/// Accounting shared by the runners.
pub(crate) struct Ledger<'a> {
    pub policy: &'a PolicyHandle,
    pub attempt: Attempt,
    pub usage: Usage,
    pub calls: usize,
    started: Instant,
}

impl<'a> Ledger<'a> {
    pub fn new(policy: &'a PolicyHandle, attempt: Attempt) -> Self {
        Ledger { policy, attempt, usage: Usage::default(), calls: 0, started: Instant::now() }
    }

    pub fn ask(&mut self, req: PolicyRequest) -> Result<PolicyResponse, EnvError> {
        let req = req.with_seed(self.attempt.seed).with_temperature(self.attempt.temperature);
        let resp = self.policy.complete(&req)?;
        self.usage += resp.usage;
        self.calls += 1;
        Ok(resp)
    }

    pub fn close(self, state: EpisodeState, outcome: Outcome, first_move: Option<Strategy>) -> EpisodeResult {
        EpisodeResult {
            state,
            outcome,
            first_move,
            usage: self.usage,
            latency_ms: self.started.elapsed().as_secs_f64() * 1000.0,
            policy_calls: self.calls,
        }
    }
}

/// Run one episode in `env` with `policy` choosing every move.
pub fn run_episode(
    env: &Environment,
    sample: &Sample,
    policy: &PolicyHandle,
    attempt: Attempt,
) -> Result<EpisodeResult, EnvError> {
    match env.spec.environment_id {
        EnvironmentId::Collaboration => collaboration::run_collaboration(env, sample, policy, attempt),
        EnvironmentId::Direct => run_direct(&env.spec, sample, policy, attempt),
        _ => run_agent(env, sample, policy, attempt),
    }
}

/// One request, one answer, no tools.
pub fn run_direct(
    spec: &EnvironmentSpec,
    sample: &Sample,
    policy: &PolicyHandle,
    attempt: Attempt,
) -> Result<EpisodeResult, EnvError> {
    let mut state = reset(spec, sample, None, &EpisodeOptions::default(), attempt.index)?;
    let mut ledger = Ledger::new(policy, attempt);
    let outcome = match ledger.ask(policy.request(&state.system_prompt, messages(&state))) {
        Ok(resp) => {
            let (think, body) = split_think(&resp.content);
            match state.finish(think.map(str::trim), body) {
                Ok(_) => Outcome::Answered,
                Err(e) => Outcome::Failed(e.to_string()),
            }
        }
        Err(e) => Outcome::Failed(e.to_string()),
    };
    Ok(ledger.close(state, outcome, Some(Strategy::Direct)))
}

fn run_agent(
    env: &Environment,
    sample: &Sample,
    policy: &PolicyHandle,
    attempt: Attempt,
) -> Result<EpisodeResult, EnvError> {
    let vignette = env.vignette_for(sample);
    let mut state = reset(&env.spec, sample, vignette, &env.options, attempt.index)?;
    let mut ledger = Ledger::new(policy, attempt);
    let mut first_move = None;
    let outcome = loop {
        let resp = match ledger.ask(policy.request(&state.system_prompt, messages(&state))) {
            Ok(r) => r,
            Err(e) => break Outcome::Failed(e.to_string()),
        };
        let mv = parse_move(state.terminal_rule, &resp.content);
        first_move.get_or_insert(match &mv {
            Move::Act(a) if a.name != TERMINATE => Strategy::Agentic,
            _ => Strategy::Direct,
        });
        let action = match mv {
            Move::Final { think, body } => break finish(&mut state, think.as_deref(), &body, Outcome::Answered),
            Move::Invalid(reason) => break Outcome::Failed(format!("unparseable reply: {reason}")),
            Move::Act(a) => a,
        };
        let stepped = match step(&mut state, &env.tools, action.clone()) {
            Err(e @ (EnvError::UnknownAction(_) | EnvError::SchemaViolation(_))) => {
                state.record_rejected(&action, &e).map(StepOutcome::Observation)
            }
            other => other,
        };
        match stepped {
            Ok(StepOutcome::Observation(_)) => continue,
            Ok(StepOutcome::Terminal(_)) => break Outcome::Answered,
            Err(EnvError::DepthExceeded(_)) => break force(&mut state, &mut ledger, &env.tools, &resp.content),
            Err(e) => break Outcome::Failed(e.to_string()),
        }
    };
    Ok(ledger.close(state, outcome, first_move))
}

fn finish(state: &mut EpisodeState, think: Option<&str>, body: &str, ok: Outcome) -> Outcome {
    match state.finish(think, body) {
        Ok(_) => ok,
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

/// Depth cap reached: ask once for an immediate answer. The forced request is
/// sent to the policy but not stored in the trajectory.
fn force(state: &mut EpisodeState, ledger: &mut Ledger<'_>, tools: &super::ToolBox, proposed: &str) -> Outcome {
    state.forced = true;
    let mut msgs = messages(state);
    msgs.push(Message { role: Role::Gpt, content: proposed.to_string(), images: Vec::new() });
    msgs.push(Message::human(FORCE_ANSWER));
    let resp = match ledger.ask(ledger.policy.request(&state.system_prompt, msgs)) {
        Ok(r) => r,
        Err(e) => return Outcome::Failed(e.to_string()),
    };
    match parse_move(state.terminal_rule, &resp.content) {
        Move::Final { think, body } => finish(state, think.as_deref(), &body, Outcome::Forced),
        Move::Act(a) if a.name == TERMINATE => match step(state, tools, a) {
            Ok(StepOutcome::Terminal(_)) => Outcome::Forced,
            Ok(_) => Outcome::Failed("depth_exceeded".into()),
            Err(e) => Outcome::Failed(e.to_string()),
        },
        _ => Outcome::Failed("depth_exceeded".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ToolFixtures;
    use crate::policy::{PolicyRole, ScriptedPolicy};
    use std::sync::Arc;

    #[test]
    fn parses_moves() {
        let fm = TerminalRule::FinalMarker;
        let ta = TerminalRule::TerminateAction { argument: "ans" };
        assert!(matches!(parse_move(fm, "<think>ok.</think>\nEffusion. [FINAL] yes"), Move::Final { .. }));
        match parse_move(
            fm,
            "<think>Check.</think>\n{\"name\":\"ChestXRayClassifier\",\"arguments\":{\"image_path\":\"a\"}}",
        ) {
            Move::Act(a) => assert_eq!((a.name.as_str(), a.think.as_str()), ("ChestXRayClassifier", "Check.")),
            other => panic!("{other:?}"),
        }
        let thought = r#"{"thought": "zoom first", "actions": [{"name": "ZoomInSubfigure", "arguments": {"image": "img_original", "param": [0,0,500,500]}}]}"#;
        match parse_move(ta, thought) {
            Move::Act(a) => assert_eq!(a.think, "zoom first"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_move(ta, r#"{"thought": "x", "actions": []}"#), Move::Invalid(_)));
        assert!(matches!(parse_move(ta, "yes"), Move::Invalid(_)));
        assert!(matches!(
            parse_move(ta, "```json\n{\"name\":\"Terminate\",\"arguments\":{\"ans\":\"no\"}}\n```"),
            Move::Act(_)
        ));
    }

    fn env() -> Environment {
        let fixtures = ToolFixtures::new([crate::env::ToolFixture {
            sample_id: "s1".into(),
            tool: "ChestXRayClassifier".into(),
            arguments_hash: "*".into(),
            observation_text: "Effusion: 0.83".into(),
            produced_image: None,
        }]);
        Environment::scripted(EnvironmentId::ToolCalling, Arc::new(fixtures))
    }

    fn agent(reply: impl Fn(&PolicyRequest) -> String + Send + Sync + 'static) -> PolicyHandle {
        PolicyHandle::scripted(PolicyRole::Agent, ScriptedPolicy::new().with_responder(move |r| Some(reply(r))))
    }

    const CALL: &str = "<think>Run the classifier.</think>\n{\"name\":\"ChestXRayClassifier\",\"arguments\":{\"image_path\":\"a.png\"}}";

    fn sample() -> Sample {
        Sample::new("s1", "mimic", "Is there a pleural effusion?", "yes").with_images(&["a.png"])
    }

    #[test]
    fn tool_then_answer() {
        let policy = agent(|r| {
            if r.last_content().contains("Effusion: 0.83") {
                "<think>High probability.</think>\nThe classifier is confident. [FINAL] Yes".into()
            } else {
                CALL.into()
            }
        });
        let res = run_episode(&env(), &sample(), &policy, Attempt::single(1)).unwrap();
        assert_eq!(res.outcome, Outcome::Answered);
        assert_eq!(res.final_answer(), Some("yes"));
        assert_eq!(res.depth(), 1);
        assert_eq!(res.first_move, Some(Strategy::Agentic));
        assert_eq!(res.policy_calls, 2);
        res.trajectory(Mode::Prospective).unwrap().check().unwrap();
    }

    #[test]
    fn cap_zero_forces_answer() {
        let policy = agent(|r| {
            if r.last_content() == FORCE_ANSWER {
                "<think>No tools left.</think>\n[FINAL] no".into()
            } else {
                CALL.into()
            }
        });
        let res = run_episode(&env().with_t_max(0), &sample(), &policy, Attempt::single(1)).unwrap();
        assert_eq!(res.outcome, Outcome::Forced);
        assert_eq!(res.depth(), 0);
        assert!(res.forced());
        let t = res.trajectory(Mode::Prospective).unwrap();
        assert_eq!(t.turns.len(), 2);
    }

    #[test]
    fn looping_policy_is_capped_and_fails() {
        let res = run_episode(&env(), &sample(), &agent(|_| CALL.into()), Attempt::single(1)).unwrap();
        assert_eq!(res.depth(), 4);
        assert!(res.forced());
        assert_eq!(res.failure(), Some("depth_exceeded"));
    }

    #[test]
    fn unknown_tool_is_recorded_and_episode_continues() {
        let policy = agent(|r| {
            if r.messages.len() == 1 {
                "<think>Try it.</think>\n{\"name\":\"Bogus\",\"arguments\":{}}".into()
            } else {
                "<think>Fine.</think>\n[FINAL] yes".into()
            }
        });
        let res = run_episode(&env(), &sample(), &policy, Attempt::single(1)).unwrap();
        assert_eq!(res.depth(), 1);
        assert!(res.state.turns[2].content.starts_with("Error: unknown action"));
    }

    #[test]
    fn attempts_follow_schedule() {
        let s = [0.2, 0.7];
        assert_eq!(Attempt::new("x", 1, &s).temperature, 0.2);
        assert_eq!(Attempt::new("x", 2, &s).temperature, 0.7);
        assert_eq!(Attempt::new("x", 8, &s).temperature, 0.7);
        assert_ne!(Attempt::new("x", 1, &s).seed, Attempt::new("x", 2, &s).seed);
    }
}
