use serde_json::json;

use super::episode::{answer_line, reset, EpisodeState, Stage};
use super::prompts::{self, fill};
use super::runner::{Attempt, EpisodeResult, Ledger, Outcome, Strategy};
use super::spec::stage;
use super::{EnvError, Environment, Sample};
use crate::eval::normalize;
use crate::policy::{Message, PolicyHandle, PolicyRole};
use crate::trajectory::{canonical_json, split_think, Action, Role, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    Basic,
    Intermediate,
    Advanced,
}

/// Earliest difficulty keyword or option number in the reply.
pub fn parse_difficulty(reply: &str) -> Option<Difficulty> {
    let body = split_think(reply).1.to_lowercase();
    let options = [
        ("basic", Difficulty::Basic),
        ("intermediate", Difficulty::Intermediate),
        ("advanced", Difficulty::Advanced),
        ("1)", Difficulty::Basic),
        ("2)", Difficulty::Intermediate),
        ("3)", Difficulty::Advanced),
    ];
    options.iter().filter_map(|(k, d)| body.find(k).map(|i| (i, *d))).min_by_key(|(i, _)| *i).map(|(_, d)| d)
}

/// Recruited expert: specialty name plus the free-text hierarchy, which is
/// kept but not enforced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expert {
    pub name: String,
    pub hierarchy: Option<String>,
}

/// Numbered-list parse: `1. Specialty - description - Hierarchy: ...`.
pub fn parse_experts(reply: &str) -> Vec<Expert> {
    split_think(reply)
        .1
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let digits = line.chars().take_while(char::is_ascii_digit).count();
            if digits == 0 {
                return None;
            }
            let rest = line[digits..].strip_prefix(['.', ')'])?.trim();
            let name = rest.split(" - ").next().unwrap_or(rest).trim().trim_matches('*').trim();
            let hierarchy = rest.find("Hierarchy:").map(|i| rest[i + "Hierarchy:".len()..].trim().to_string());
            (!name.is_empty()).then(|| Expert { name: name.to_string(), hierarchy })
        })
        .collect()
}

/// Majority by normalized answer; ties go to the earliest answer among the tied.
pub fn majority_vote(answers: &[String]) -> Option<String> {
    let norms: Vec<String> = answers.iter().map(|a| normalize(a)).collect();
    let count = |n: &String| norms.iter().filter(|m| *m == n).count();
    let best = norms.iter().map(count).max()?;
    norms.iter().position(|n| count(n) == best).map(|i| answers[i].clone())
}

struct Reply {
    think: Option<String>,
    body: String,
}

/// Protocol driver: one policy request per stage with one re-ask on parse failure.
struct Panel<'s, 'p> {
    state: &'s mut EpisodeState,
    ledger: Ledger<'p>,
    question: String,
}

impl Panel<'_, '_> {
    fn room(&self) -> bool {
        self.state.actions_taken < self.state.t_max
    }

    fn ask<T>(
        &mut self,
        role: PolicyRole,
        system: &str,
        user: &str,
        reask: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(Reply, T), EnvError> {
        let mut msgs = vec![Message::human(user)];
        for round in 0..2 {
            let req = self.ledger.policy.request(system, msgs.clone());
            let mut req = req;
            req.role = role;
            let resp = self.ledger.ask(req)?;
            let (think, body) = split_think(&resp.content);
            if let Some(v) = parse(body) {
                let reply = Reply { think: think.map(|t| t.trim().to_string()), body: body.trim().to_string() };
                return Ok((reply, v));
            }
            if round == 0 {
                msgs.push(Message { role: Role::Gpt, content: resp.content, images: Vec::new() });
                msgs.push(Message::human(reask));
            }
        }
        Err(EnvError::ProtocolViolation(format!("{} reply unparseable after re-ask", role)))
    }

    fn record(
        &mut self,
        name: &str,
        args: serde_json::Value,
        think: Option<String>,
        default_think: &str,
        agent: &str,
        body: &str,
    ) {
        let think = think.filter(|t| !t.is_empty()).unwrap_or_else(|| default_think.to_string());
        let action = Action::new(name, args).with_think(think);
        let obs = canonical_json(&json!({"agent": agent, "response": body}));
        self.state.record(&action, Turn::observation(obs, Vec::new()));
    }

    fn expert_answer(body: &str) -> Option<String> {
        answer_line(body)
    }

    /// Single expert asked to answer immediately.
    fn forced_answer(&mut self) -> Result<(Option<String>, String), EnvError> {
        let user =
            format!("{}\n\n{}", fill(prompts::EXPERT_QUERY, &[("question", &self.question)]), prompts::FORCE_ANSWER);
        let (reply, answer) =
            self.ask(PolicyRole::Expert, prompts::SINGLE_EXPERT, &user, prompts::EXPERT_REASK, Self::expert_answer)?;
        Ok((reply.think, answer))
    }

    fn run(&mut self) -> Result<Outcome, EnvError> {
        let q = self.question.clone();
        if !self.room() {
            return self.conclude_forced(&[]);
        }
        let user = fill(prompts::ASSESS_QUERY, &[("question", &q)]);
        let (reply, difficulty) =
            self.ask(PolicyRole::Agent, prompts::ASSESSOR, &user, prompts::ASSESS_REASK, parse_difficulty)?;
        self.record(
            stage::ASSESS,
            json!({}),
            reply.think,
            "Decide how much expertise the query needs.",
            "difficulty_assessor",
            &reply.body,
        );

        if difficulty == Difficulty::Basic {
            if !self.room() {
                return self.conclude_forced(&[]);
            }
            let user = fill(prompts::EXPERT_QUERY, &[("question", &q)]);
            let (reply, answer) = self.ask(
                PolicyRole::Expert,
                prompts::SINGLE_EXPERT,
                &user,
                prompts::EXPERT_REASK,
                Self::expert_answer,
            )?;
            let think = reply.think.clone();
            self.record(
                stage::EXPERT_ANSWER,
                json!({}),
                reply.think,
                "A single expert can answer this query.",
                "expert",
                &reply.body,
            );
            let think = think.unwrap_or_else(|| "The expert's answer is final.".to_string());
            self.state.finish(Some(&think), &answer)?;
            return Ok(Outcome::Answered);
        }
        if difficulty == Difficulty::Advanced {
            tracing::info!(sample_id = %self.state.sample.sample_id, "advanced query runs the intermediate protocol");
        }

        self.state.stage = Stage::Recruitment;
        if !self.room() {
            return self.conclude_forced(&[]);
        }
        let user = fill(prompts::RECRUIT_QUERY, &[("question", &q)]);
        let (reply, experts) = self.ask(PolicyRole::Agent, prompts::RECRUITER, &user, prompts::RECRUIT_REASK, |b| {
            let e = parse_experts(b);
            (e.len() >= 3).then(|| e.into_iter().take(3).collect::<Vec<_>>())
        })?;
        self.record(
            stage::RECRUIT,
            json!({}),
            reply.think,
            "Recruit three specialists relevant to the query.",
            "recruiter",
            &reply.body,
        );

        self.state.stage = Stage::Analysis;
        let mut opinions: Vec<(String, String)> = Vec::new();
        for e in &experts {
            if !self.room() {
                return self.conclude_forced(&opinions);
            }
            let system = fill(prompts::EXPERT, &[("expert", &e.name)]);
            let user = fill(prompts::EXPERT_QUERY, &[("question", &q)]);
            let (reply, answer) =
                self.ask(PolicyRole::Expert, &system, &user, prompts::EXPERT_REASK, Self::expert_answer)?;
            let default = format!("Ask the {} for an independent analysis.", e.name);
            self.record(stage::ANALYSIS, json!({"expert": e.name}), reply.think, &default, &e.name, &reply.body);
            opinions.push((reply.body, answer));
        }

        self.state.stage = Stage::Debate;
        for round in 1..=2 {
            for (i, e) in experts.iter().enumerate() {
                if !self.room() {
                    return self.conclude_forced(&opinions);
                }
                let others: Vec<String> = experts
                    .iter()
                    .zip(&opinions)
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, (x, (body, _)))| format!("{}: {body}", x.name))
                    .collect();
                let system = fill(prompts::EXPERT, &[("expert", &e.name)]);
                let user = fill(
                    prompts::DEBATE_QUERY,
                    &[
                        ("question", &q),
                        ("round", &round.to_string()),
                        ("own", &opinions[i].0),
                        ("others", &others.join("\n")),
                    ],
                );
                let (reply, answer) =
                    self.ask(PolicyRole::Expert, &system, &user, prompts::EXPERT_REASK, Self::expert_answer)?;
                let default = format!("Let the {} respond to the panel in round {round}.", e.name);
                self.record(
                    stage::DEBATE,
                    json!({"expert": e.name, "round": round}),
                    reply.think,
                    &default,
                    &e.name,
                    &reply.body,
                );
                opinions[i] = (reply.body, answer);
            }
        }

        self.state.stage = Stage::Synthesis;
        if !self.room() {
            return self.conclude_forced(&opinions);
        }
        let reports: Vec<String> =
            experts.iter().zip(&opinions).map(|(e, (body, _))| format!("{}: {body}", e.name)).collect();
        let user = fill(prompts::SYNTHESIS_QUERY, &[("question", &q), ("opinions", &reports.join("\n\n"))]);
        let (reply, ()) = self.ask(PolicyRole::Agent, prompts::SYNTHESIZER, &user, prompts::EXPERT_REASK, |b| {
            (!b.trim().is_empty()).then_some(())
        })?;
        self.record(
            stage::SYNTHESIZE,
            json!({}),
            reply.think,
            "Summarize the panel's reports.",
            "synthesizer",
            &reply.body,
        );

        self.moderate(&experts, &opinions)?;
        Ok(Outcome::Answered)
    }

    fn moderate(&mut self, experts: &[Expert], opinions: &[(String, String)]) -> Result<(), EnvError> {
        self.state.stage = Stage::Moderation;
        let answers: Vec<String> = opinions.iter().map(|(_, a)| a.clone()).collect();
        let vote = majority_vote(&answers).ok_or_else(|| EnvError::ProtocolViolation("no expert answers".into()))?;
        let listed: Vec<String> = experts.iter().zip(&answers).map(|(e, a)| format!("{}: {a}", e.name)).collect();
        let user = fill(prompts::MODERATOR_QUERY, &[("question", &self.question), ("answers", &listed.join("\n"))]);
        let (reply, ()) =
            self.ask(PolicyRole::Moderator, prompts::MODERATOR, &user, prompts::EXPERT_REASK, |_| Some(()))?;
        let think =
            reply.think.filter(|t| !t.is_empty()).unwrap_or_else(|| "Majority vote over the expert answers.".into());
        self.state.finish(Some(&think), &vote)?;
        Ok(())
    }

    /// Depth cap reached: vote over whatever answers exist, or ask one expert.
    fn conclude_forced(&mut self, opinions: &[(String, String)]) -> Result<Outcome, EnvError> {
        self.state.forced = true;
        let answers: Vec<String> = opinions.iter().map(|(_, a)| a.clone()).collect();
        let (think, answer) = match majority_vote(&answers) {
            Some(v) => (Some("Majority vote over the answers given so far.".to_string()), v),
            None => self.forced_answer()?,
        };
        self.state.finish(think.as_deref(), &answer)?;
        Ok(Outcome::Forced)
    }
}

/// Run the staged panel protocol for one sample.
pub fn run_collaboration(
    env: &Environment,
    sample: &Sample,
    policy: &PolicyHandle,
    attempt: Attempt,
) -> Result<EpisodeResult, EnvError> {
    let mut state = reset(&env.spec, sample, None, &env.options, attempt.index)?;
    let mut panel =
        Panel { state: &mut state, ledger: Ledger::new(policy, attempt), question: sample.question.clone() };
    let outcome = panel.run().unwrap_or_else(|e| Outcome::Failed(e.to_string()));
    let first = if panel.state.actions_taken > 0 { Strategy::Agentic } else { Strategy::Direct };
    let ledger = panel.ledger;
    Ok(ledger.close(state, outcome, Some(first)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ToolFixtures;
    use crate::policy::{PolicyRequest, ScriptedPolicy};
    use crate::trajectory::{EnvironmentId, Mode};
    use std::sync::Arc;

    fn env() -> Environment {
        Environment::scripted(EnvironmentId::Collaboration, Arc::new(ToolFixtures::default()))
    }

    /// Scripted panel; `answers[i]` is expert i's answer in every stage.
    fn panel(difficulty: &'static str, answers: [&'static str; 3]) -> PolicyHandle {
        let names = ["Pulmonologist", "Radiologist", "Pathologist"];
        PolicyHandle::scripted(
            PolicyRole::Agent,
            ScriptedPolicy::new().with_responder(move |r: &PolicyRequest| {
                let reply = match r.role {
                    PolicyRole::Agent if r.system_prompt == prompts::ASSESSOR => difficulty.to_string(),
                    PolicyRole::Agent if r.system_prompt == prompts::RECRUITER => {
                        "1. Pulmonologist - lungs - Hierarchy: Independent\n2. Radiologist - imaging\n3. Pathologist - tissue".into()
                    }
                    PolicyRole::Agent => "<think>Key points agree.</think>\nThe panel converges.".into(),
                    PolicyRole::Moderator => "<think>Count the votes.</think>\nvote".into(),
                    PolicyRole::Expert if r.system_prompt == prompts::SINGLE_EXPERT => "Looks clear.\nAnswer: yes".into(),
                    PolicyRole::Expert => {
                        let i = names.iter().position(|n| r.system_prompt.contains(n)).unwrap();
                        format!("<think>From my specialty.</think>\nMy view.\nAnswer: {}", answers[i])
                    }
                    _ => return None,
                };
                Some(reply)
            }),
        )
    }

    fn sample() -> Sample {
        Sample::new("q1", "pubmedqa", "Does the drug reduce mortality?", "yes")
    }

    #[test]
    fn basic_path_has_depth_two() {
        let res = run_collaboration(
            &env(),
            &sample(),
            &panel("<think>Simple.</think>\n1) basic", ["no"; 3]),
            Attempt::single(1),
        )
        .unwrap();
        assert_eq!(res.outcome, Outcome::Answered);
        assert_eq!(res.depth(), 2);
        assert_eq!(res.final_answer(), Some("yes"));
        let t = res.trajectory(Mode::Prospective).unwrap();
        assert_eq!(t.turns.last().unwrap().role, Role::Gpt);
        t.check().unwrap();
    }

    #[test]
    fn intermediate_stage_counts() {
        let res =
            run_collaboration(&env(), &sample(), &panel("2) intermediate", ["yes"; 3]), Attempt::single(1)).unwrap();
        assert_eq!(res.final_answer(), Some("yes"));
        let names: Vec<String> =
            res.trajectory(Mode::Prospective).unwrap().actions().unwrap().into_iter().map(|a| a.name).collect();
        let count = |n: &str| names.iter().filter(|x| *x == n).count();
        assert_eq!(
            [
                count(stage::ASSESS),
                count(stage::RECRUIT),
                count(stage::ANALYSIS),
                count(stage::DEBATE),
                count(stage::SYNTHESIZE)
            ],
            [1, 1, 3, 6, 1]
        );
        assert_eq!(names.len(), 12);
    }

    #[test]
    fn two_to_one_vote() {
        let res =
            run_collaboration(&env(), &sample(), &panel("2) intermediate", ["no", "no", "yes"]), Attempt::single(1))
                .unwrap();
        assert_eq!(res.final_answer(), Some("no"));
    }

    #[test]
    fn advanced_runs_as_intermediate() {
        let res = run_collaboration(&env(), &sample(), &panel("3) advanced", ["yes"; 3]), Attempt::single(1)).unwrap();
        assert_eq!(res.depth(), 12);
    }

    #[test]
    fn unparseable_assessment_after_reask() {
        let res = run_collaboration(&env(), &sample(), &panel("hard to say", ["yes"; 3]), Attempt::single(1)).unwrap();
        assert!(matches!(res.outcome, Outcome::Failed(ref m) if m.contains("protocol violation")));
        assert_eq!(res.policy_calls, 2);
    }

    #[test]
    fn capped_panel_votes_early() {
        let res = run_collaboration(
            &env().with_t_max(4),
            &sample(),
            &panel("2) intermediate", ["no", "yes", "yes"]),
            Attempt::single(1),
        )
        .unwrap();
        assert_eq!(res.outcome, Outcome::Forced);
        assert_eq!(res.depth(), 4);
        assert_eq!(res.final_answer(), Some("no"));
    }

    #[test]
    fn helpers() {
        assert_eq!(parse_difficulty("<think>x</think>\n2) intermediate"), Some(Difficulty::Intermediate));
        assert_eq!(parse_difficulty("nothing"), None);
        let e = parse_experts(
            "1. Cardiologist - heart - Hierarchy: Pediatrician > Cardiologist\nnoise\n2) **Neurologist**",
        );
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].hierarchy.as_deref(), Some("Pediatrician > Cardiologist"));
        assert_eq!(e[1].name, "Neurologist");
        let v = |a: &[&str]| majority_vote(&a.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        assert_eq!(v(&["Yes.", "no", "yes"]).as_deref(), Some("Yes."));
        assert_eq!(v(&["a", "b", "c"]).as_deref(), Some("a"));
        assert_eq!(v(&[]), None);
    }
}
