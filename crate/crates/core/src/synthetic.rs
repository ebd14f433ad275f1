//! A seeded toy corpus with known per-sample outcomes.
//!
//! Each sample's fate is fixed up front (student right or wrong, teacher
//! right or wrong, the attempt on which the agent first succeeds), and
//! scripted policies act it out. Tests compare pipeline output with that
//! table; `materialize` records the same run as fixture files so the CLI
//! can replay it.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::{build_pipeline, Handles};
use crate::config::{BackendKind, DatasetConfig, ForgeConfig, PolicyConfig};
use crate::env::{Sample, ToolFixture, ToolFixtures, ANY_ARGUMENTS};
use crate::eval::MatcherKind;
use crate::pipeline::Pipeline;
use crate::policy::{
    recap_json, Backend, PolicyHandle, PolicyRequest, PolicyRole, RecapEntry, RecapStep, ScriptedPolicy, Update,
};
use crate::seed::attempt_seed;
use crate::trajectory::EnvironmentId;

pub const DATASET_ID: &str = "synthetic";
const TOOL: &str = "ChestXRayClassifier";
const FINDINGS: [&str; 3] = ["pleural effusion", "pneumothorax", "cardiomegaly"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub student_accuracy: f64,
    /// Accuracy on what the student missed.
    pub teacher_accuracy: f64,
    /// Share of agentic samples solved within `retries` attempts.
    pub agent_success: f64,
    pub retries: u32,
    /// Share of solved samples whose recap comes back malformed.
    pub recap_failure: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            samples: 200,
            student_accuracy: 0.6,
            teacher_accuracy: 0.5,
            agent_success: 0.8,
            retries: 8,
            recap_failure: 0.0,
            seed: 7,
        }
    }
}

/// What each policy will do on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truth {
    pub student: bool,
    pub teacher: bool,
    /// First attempt with a correct answer, if any within the budget.
    pub agent_attempt: Option<u32>,
    pub recap_ok: bool,
}

pub struct SyntheticWorld {
    pub spec: SyntheticSpec,
    pub dataset: Vec<Sample>,
    pub truth: BTreeMap<String, Truth>,
}

fn count(share: f64, n: usize) -> usize {
    ((share * n as f64).round() as usize).min(n)
}

fn flip(answer: &str) -> &'static str {
    if answer == "yes" {
        "no"
    } else {
        "yes"
    }
}

/// Sample id embedded in a question as `[id]`.
fn tagged_id(text: &str) -> Option<&str> {
    let start = text.find("[syn-")? + 1;
    let end = start + text[start..].find(']')?;
    Some(&text[start..end])
}

impl SyntheticWorld {
    pub fn new(spec: SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dataset: Vec<Sample> = (0..spec.samples)
            .map(|i| {
                let id = format!("syn-{i:04}");
                let finding = FINDINGS[i % FINDINGS.len()];
                let gold = if rng.random::<bool>() { "yes" } else { "no" };
                let mut s =
                    Sample::new(&id, DATASET_ID, &format!("[{id}] Is there {finding} on this chest radiograph?"), gold)
                        .with_images(&[&format!("synthetic/{id}.png")]);
                s.category = Some(finding.to_string());
                s
            })
            .collect();

        let mut order: Vec<usize> = (0..spec.samples).collect();
        order.shuffle(&mut rng);
        let n_student = count(spec.student_accuracy, order.len());
        let (student_ok, rest) = order.split_at(n_student);
        let n_teacher = count(spec.teacher_accuracy, rest.len());
        let (teacher_ok, rest) = rest.split_at(n_teacher);
        let n_agent = count(spec.agent_success, rest.len());
        let (agent_ok, _) = rest.split_at(n_agent);
        let n_recap_bad = count(spec.recap_failure, agent_ok.len());

        let mut truth: BTreeMap<String, Truth> = dataset
            .iter()
            .map(|s| {
                (s.sample_id.clone(), Truth { student: false, teacher: false, agent_attempt: None, recap_ok: true })
            })
            .collect();
        let id = |i: &usize| dataset[*i].sample_id.clone();
        for i in student_ok {
            truth.get_mut(&id(i)).expect("known id").student = true;
        }
        for i in teacher_ok {
            truth.get_mut(&id(i)).expect("known id").teacher = true;
        }
        for (k, i) in agent_ok.iter().enumerate() {
            let t = truth.get_mut(&id(i)).expect("known id");
            t.agent_attempt = Some(rng.random_range(1..=spec.retries.max(1)));
            t.recap_ok = k >= n_recap_bad;
        }
        SyntheticWorld { spec, dataset, truth }
    }

    fn gold(&self, id: &str) -> Option<&str> {
        self.dataset.iter().find(|s| s.sample_id == id).map(|s| s.gold_answer.as_str())
    }

    fn finding(&self, id: &str) -> &'static str {
        let i: usize = id.trim_start_matches("syn-").parse().unwrap_or(0);
        FINDINGS[i % FINDINGS.len()]
    }

    /// One classifier observation per sample, consistent with its gold answer.
    pub fn tool_fixtures(&self) -> Vec<ToolFixture> {
        self.dataset
            .iter()
            .map(|s| {
                let score = if s.gold_answer == "yes" { "0.91" } else { "0.04" };
                ToolFixture {
                    sample_id: s.sample_id.clone(),
                    tool: TOOL.to_string(),
                    arguments_hash: ANY_ARGUMENTS.to_string(),
                    observation_text: format!(
                        "Classifier probabilities: {} {score} (decision threshold 0.50).",
                        self.finding(&s.sample_id)
                    ),
                    produced_image: None,
                }
            })
            .collect()
    }

    fn direct_policy(self: &Arc<Self>, role: PolicyRole) -> PolicyHandle {
        let world = self.clone();
        let policy = ScriptedPolicy::new()
            .with_responder(move |req: &PolicyRequest| {
                let id = tagged_id(&req.messages.first()?.content)?;
                let gold = world.gold(id)?;
                let t = world.truth.get(id)?;
                let right = if role == PolicyRole::Student { t.student } else { t.teacher };
                let answer = if right { gold } else { flip(gold) };
                Some(format!("<think>Judging from the radiograph alone.</think>\nAnswer: {answer}"))
            })
            .recording();
        PolicyHandle::scripted(role, policy)
    }

    fn agent_policy(self: &Arc<Self>) -> PolicyHandle {
        let world = self.clone();
        let retries = self.spec.retries;
        let policy = ScriptedPolicy::new()
            .with_responder(move |req: &PolicyRequest| {
                let id = tagged_id(&req.messages.first()?.content)?;
                let gold = world.gold(id)?;
                let t = world.truth.get(id)?;
                let attempt = (1..=retries).find(|k| attempt_seed(id, *k) == req.decoding.seed)?;
                if req.messages.len() == 1 {
                    return Some(format!(
                        "<think>The question is about {}, so I will run the classifier on the radiograph first.</think>\n\
                         {{\"name\":\"{TOOL}\",\"arguments\":{{\"image_path\":\"synthetic/{id}.png\"}}}}",
                        world.finding(id)
                    ));
                }
                let right = t.agent_attempt.is_some_and(|k| attempt >= k);
                let answer = if right { gold } else { flip(gold) };
                Some(format!("<think>The classifier probability decides the question.</think>\n[FINAL] {answer}"))
            })
            .recording();
        PolicyHandle::scripted(PolicyRole::Agent, policy)
    }

    fn recap_policy(self: &Arc<Self>) -> PolicyHandle {
        let world = self.clone();
        let policy = ScriptedPolicy::new()
            .with_responder(move |req: &PolicyRequest| {
                let id = tagged_id(&req.messages.first()?.content)?;
                if !world.truth.get(id)?.recap_ok {
                    return Some("The episode went well overall.".to_string());
                }
                let finding = world.finding(id);
                let entries = [
                    RecapEntry::Tool(RecapStep {
                        step: 0,
                        tool: TOOL.to_string(),
                        why: format!("A classifier score is the quickest check for {finding}"),
                        got: "The classifier returned a probability for the finding".to_string(),
                        update: Update::Increase,
                        evidence: "classifier probability".to_string(),
                        inference: "The probability is far from the decision threshold".to_string(),
                        confidence: 85,
                    }),
                    RecapEntry::Terminate { step: 1, why: "The score is decisive, so I can answer".to_string() },
                ];
                Some(recap_json(&entries))
            })
            .recording();
        PolicyHandle::scripted(PolicyRole::Recap, policy)
    }

    /// Scripted handles acting out the truth table, with recording on.
    pub fn handles(self: &Arc<Self>) -> Handles {
        Handles {
            student: self.direct_policy(PolicyRole::Student),
            teacher: self.direct_policy(PolicyRole::Teacher),
            agent: self.agent_policy(),
            recap: self.recap_policy(),
        }
    }

    /// Config describing this world on disk under `dir`.
    pub fn config(&self, dir: &Path) -> ForgeConfig {
        let mut cfg = ForgeConfig { base_dir: dir.to_path_buf(), ..ForgeConfig::default() };
        cfg.datasets.push(DatasetConfig {
            id: DATASET_ID.to_string(),
            path: PathBuf::from("dataset.jsonl"),
            matcher: MatcherKind::Exact,
            category_field: Some("category".to_string()),
        });
        cfg.env_map.insert(DATASET_ID.to_string(), EnvironmentId::ToolCalling);
        let scripted = |file: &str| PolicyConfig {
            backend: BackendKind::Scripted,
            endpoint: None,
            fixture_path: Some(PathBuf::from(format!("fixtures/{file}.jsonl"))),
            default_reply: None,
            seed: 0,
            max_in_flight: None,
            max_retries: None,
            timeout_ms: None,
        };
        cfg.policies.student = Some(scripted("student"));
        cfg.policies.teacher = Some(scripted("teacher"));
        cfg.policies.agent = Some(scripted("agent"));
        cfg.policies.recap = Some(scripted("recap"));
        cfg.tools.fixture_path = Some(PathBuf::from("tools.jsonl"));
        cfg.tier3.retries = self.spec.retries;
        cfg.global_seed = self.spec.seed;
        cfg
    }

    /// In-process pipeline driven by the responders.
    pub fn pipeline(self: &Arc<Self>, dir: &Path) -> Pipeline {
        let cfg = self.config(dir);
        let fixtures = Arc::new(ToolFixtures::new(self.tool_fixtures()));
        build_pipeline(&cfg, self.handles(), fixtures).expect("synthetic config is valid")
    }

    /// Writes dataset, tool fixtures, recorded policy fixtures and
    /// `forge.json` under `dir`; returns the config path.
    pub fn materialize(self: &Arc<Self>, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir.join("fixtures"))?;
        let lines = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
        fs::write(
            dir.join("dataset.jsonl"),
            lines(self.dataset.iter().map(|s| serde_json::to_string(s).expect("sample serializes")).collect()),
        )?;
        fs::write(
            dir.join("tools.jsonl"),
            lines(self.tool_fixtures().iter().map(|f| serde_json::to_string(f).expect("fixture serializes")).collect()),
        )?;

        let pipeline = self.pipeline(dir);
        pipeline.run(&self.dataset).map_err(io::Error::other)?;
        let handles = [
            ("student", &pipeline.student),
            ("teacher", &pipeline.teacher),
            ("agent", &pipeline.agentic.agent),
            ("recap", &pipeline.agentic.recap),
        ];
        for (name, h) in handles {
            let Backend::Scripted(s) = &h.backend else { unreachable!("synthetic handles are scripted") };
            let recorded = s.recorded().iter().map(|e| serde_json::to_string(e).expect("entry serializes")).collect();
            fs::write(dir.join("fixtures").join(format!("{name}.jsonl")), lines(recorded))?;
        }
        let path = dir.join("forge.json");
        fs::write(&path, self.config(dir).to_json() + "\n")?;
        Ok(path)
    }
}
