use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use image::DynamicImage;

use super::prompts::{self, fill};
use super::spec::{EnvironmentSpec, TerminalRule, TERMINATE};
use super::tools::{ProducedImage, ToolBox, ToolContext};
use super::vignette::PatientVignette;
use super::{EnvError, EpisodeOptions, Sample};
use crate::trajectory::{split_think, Action, EnvironmentId, Mode, Role, ToolSchema, Trajectory, Turn, IMAGE_TOKEN};

pub const IMG_ORIGINAL: &str = "img_original";
pub const IMG_LAST: &str = "img_last";
const FINAL_MARKER: &str = "[FINAL]";

/// Protocol position of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Open,
    Assessment,
    Recruitment,
    Analysis,
    Debate,
    Synthesis,
    Moderation,
    Done,
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Observation(Turn),
    Terminal(String),
}

/// Mutable state of one episode. Single owner; one episode per thread.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub sample: Sample,
    pub environment_id: EnvironmentId,
    pub t_max: usize,
    pub terminal_rule: TerminalRule,
    pub system_prompt: String,
    pub tool_schemas: Vec<ToolSchema>,
    pub turns: Vec<Turn>,
    pub actions_taken: usize,
    /// Image id to reference; `img_last` is resolved through [`EpisodeState::img_last`].
    pub image_registry: BTreeMap<String, String>,
    pub img_last: Option<String>,
    /// Conversation-level image references, in placeholder order.
    pub images: Vec<String>,
    pub stage: Stage,
    pub terminated: bool,
    pub forced: bool,
    pub final_answer: Option<String>,
    vignette: Option<PatientVignette>,
    pixels: BTreeMap<String, Arc<DynamicImage>>,
    options: EpisodeOptions,
    attempt: u32,
    rounds: usize,
}

fn with_image_tokens(n: usize, body: &str) -> String {
    format!("{}{body}", format!("{IMAGE_TOKEN}\n").repeat(n))
}

/// Start an episode: one human turn, empty history.
pub fn reset(
    env: &EnvironmentSpec,
    sample: &Sample,
    vignette: Option<&PatientVignette>,
    options: &EpisodeOptions,
    attempt: u32,
) -> Result<EpisodeState, EnvError> {
    sample.check()?;
    let id = env.environment_id;
    if id == EnvironmentId::Simulation && vignette.is_none() {
        return Err(EnvError::MissingVignette(sample.sample_id.clone()));
    }
    if matches!(id, EnvironmentId::ToolCalling | EnvironmentId::Interleaved) && sample.images.is_empty() {
        return Err(EnvError::MissingImage(sample.sample_id.clone()));
    }
    let n = sample.images.len();
    let body = match (id, vignette) {
        (EnvironmentId::Simulation, Some(v)) => fill(
            prompts::SIMULATION_CASE,
            &[
                ("objective", &v.objective),
                ("presentation", &v.presentation()),
                ("available_exams", &v.available_exams().join(", ")),
                ("available_tests", &v.available_tests().join(", ")),
            ],
        ),
        (EnvironmentId::ToolCalling, _) => {
            format!("{}\n\nImage path: {}", sample.question, sample.images.join(", "))
        }
        _ => sample.question.clone(),
    };
    let human = Turn::human(with_image_tokens(n, &body), sample.images.clone());
    let mut image_registry = BTreeMap::new();
    let mut img_last = None;
    if id == EnvironmentId::Interleaved {
        image_registry.insert(IMG_ORIGINAL.to_string(), sample.images[0].clone());
        img_last = Some(IMG_ORIGINAL.to_string());
    }
    Ok(EpisodeState {
        sample: sample.clone(),
        environment_id: id,
        t_max: env.t_max,
        terminal_rule: env.terminal_rule,
        system_prompt: env.system_prompt.clone(),
        tool_schemas: env.tool_schemas.clone(),
        turns: vec![human],
        actions_taken: 0,
        image_registry,
        img_last,
        images: sample.images.clone(),
        stage: if id == EnvironmentId::Collaboration { Stage::Assessment } else { Stage::Open },
        terminated: false,
        forced: false,
        final_answer: None,
        vignette: vignette.cloned(),
        pixels: BTreeMap::new(),
        options: options.clone(),
        attempt,
        rounds: 0,
    })
}

/// Execute one action. Tool errors come back as observation text; the
/// episode continues. `Terminate` ends the episode.
pub fn step(state: &mut EpisodeState, tools: &ToolBox, action: Action) -> Result<StepOutcome, EnvError> {
    if state.terminated {
        return Err(EnvError::Terminated);
    }
    let schema = state
        .tool_schemas
        .iter()
        .find(|s| s.name == action.name)
        .ok_or_else(|| EnvError::UnknownAction(action.name.clone()))?;
    schema.validate(&action.arguments)?;
    if action.name == TERMINATE {
        let think = (!action.think.is_empty()).then_some(action.think.as_str());
        let answer = state.finish(think, &action.to_json())?;
        return Ok(StepOutcome::Terminal(answer));
    }
    if state.actions_taken >= state.t_max {
        return Err(EnvError::DepthExceeded(state.t_max));
    }
    let input = action.arguments.get("image").and_then(|v| v.as_str()).map(|id| state.load_image(id));
    let result = match input {
        Some(Err(msg)) => Err(msg),
        other => {
            let ctx = ToolContext {
                sample_id: &state.sample.sample_id,
                vignette: state.vignette.as_ref(),
                input_image: other.and_then(Result::ok),
            };
            tools.execute(&action.name, &action.arguments, &ctx)
        }
    };
    let observation = match result {
        Ok(out) => match out.image {
            Some(img) => {
                let (id, reference) = state.register(img)?;
                Turn::observation(format!("{}\n[Output Image ID: {id}]\n{IMAGE_TOKEN}", out.text), vec![reference])
            }
            None => Turn::observation(out.text, Vec::new()),
        },
        Err(failure) => Turn::observation(failure, Vec::new()),
    };
    Ok(StepOutcome::Observation(state.record(&action, observation)))
}

impl EpisodeState {
    /// Depth so far.
    pub fn depth(&self) -> usize {
        self.actions_taken
    }

    /// Append a (function_call, observation) pair. Used by [`step`] and by
    /// protocol runners whose stages are answered by policies.
    pub(crate) fn record(&mut self, action: &Action, observation: Turn) -> Turn {
        self.images.extend(observation.images.iter().cloned());
        self.turns.push(Turn::function_call(&action.think, action));
        self.turns.push(observation.clone());
        self.actions_taken += 1;
        observation
    }

    /// Record an action the environment rejected, with the error as observation.
    pub fn record_rejected(&mut self, action: &Action, error: &EnvError) -> Result<Turn, EnvError> {
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        if self.actions_taken >= self.t_max {
            return Err(EnvError::DepthExceeded(self.t_max));
        }
        Ok(self.record(action, Turn::observation(format!("Error: {error}"), Vec::new())))
    }

    /// Append the final gpt turn and extract the answer. On failure the turn
    /// stays, the episode is terminated, and no answer is set.
    pub fn finish(&mut self, think: Option<&str>, body: &str) -> Result<String, EnvError> {
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        self.turns.push(Turn::gpt(think, body));
        self.terminated = true;
        self.stage = Stage::Done;
        let answer = extract_answer(self)?;
        self.final_answer = Some(answer.clone());
        Ok(answer)
    }

    fn resolve_id(&self, id: &str) -> Option<&str> {
        let id = if id == IMG_LAST { self.img_last.as_deref()? } else { id };
        self.image_registry.get(id).map(String::as_str)
    }

    fn load_image(&mut self, id: &str) -> Result<Arc<DynamicImage>, String> {
        let key = if id == IMG_LAST { self.img_last.clone().unwrap_or_default() } else { id.to_string() };
        if let Some(p) = self.pixels.get(&key) {
            return Ok(p.clone());
        }
        let reference = self.resolve_id(id).ok_or_else(|| format!("unknown image id `{id}`"))?.to_string();
        let path = self.path_for(&reference);
        let img = image::open(&path).map_err(|e| format!("cannot read image `{reference}`: {e}"))?;
        let img = Arc::new(img);
        self.pixels.insert(key, img.clone());
        Ok(img)
    }

    fn path_for(&self, reference: &str) -> PathBuf {
        match &self.options.image_root {
            Some(root) => root.join(reference),
            None => PathBuf::from(reference),
        }
    }

    fn register(&mut self, img: ProducedImage) -> Result<(String, String), EnvError> {
        let id = format!("img_round_{}", self.rounds);
        let reference = match img {
            ProducedImage::Reference(r) => r,
            ProducedImage::Raster(pixels) => {
                let reference = format!("{}/attempt_{}/{id}.png", self.sample.sample_id, self.attempt);
                if let Some(dir) = &self.options.artifact_dir {
                    let path = dir.join(&reference);
                    if let Some(parent) = path.parent() {
                        fs::create_dir_all(parent).map_err(|e| EnvError::Artifact(e.to_string()))?;
                    }
                    pixels.save(&path).map_err(|e| EnvError::Artifact(e.to_string()))?;
                }
                self.pixels.insert(id.clone(), Arc::new(pixels));
                reference
            }
        };
        self.rounds += 1;
        self.image_registry.insert(id.clone(), reference.clone());
        self.img_last = Some(id.clone());
        Ok((id, reference))
    }

    /// Materialise the finished episode.
    pub fn to_trajectory(&self, mode: Mode) -> Result<Trajectory, EnvError> {
        if !self.terminated {
            return Err(EnvError::NotTerminated);
        }
        let final_answer = self.final_answer.clone().ok_or(EnvError::MarkerMissing)?;
        Ok(Trajectory {
            sample_id: self.sample.sample_id.clone(),
            environment_id: self.environment_id,
            system_prompt: self.system_prompt.clone(),
            tool_schemas: self.tool_schemas.clone(),
            turns: self.turns.clone(),
            images: self.images.clone(),
            mode,
            final_answer,
            tier: Some(mode.tier()),
            dataset_id: Some(self.sample.dataset_id.clone()),
            gold_answer: Some(self.sample.gold_answer.clone()),
            category: self.sample.category.clone(),
        })
    }
}

fn yes_no(answer: &str) -> String {
    let bare = answer.trim_end_matches(['.', '!']).trim();
    match bare.to_lowercase().as_str() {
        l @ ("yes" | "no") => l.to_string(),
        _ => answer.to_string(),
    }
}

/// Answer line of free text: the text after `[FINAL]` or `Answer:` when
/// present, otherwise the last non-empty line.
pub(crate) fn answer_line(body: &str) -> Option<String> {
    if let Some(idx) = body.rfind(FINAL_MARKER) {
        let rest = body[idx + FINAL_MARKER.len()..].trim();
        return (!rest.is_empty()).then(|| rest.to_string());
    }
    let line = body.lines().map(str::trim).rfind(|l| !l.is_empty())?;
    let lower = line.to_lowercase();
    let line = match lower.find("answer:") {
        Some(i) => line[i + "answer:".len()..].trim(),
        None => line,
    };
    (!line.is_empty()).then(|| line.to_string())
}

/// Final answer of a terminated episode, read from its last turn.
pub fn extract_answer(state: &EpisodeState) -> Result<String, EnvError> {
    if !state.terminated {
        return Err(EnvError::NotTerminated);
    }
    let last = state.turns.last().filter(|t| t.role == Role::Gpt).ok_or(EnvError::MarkerMissing)?;
    let body = split_think(&last.content).1;
    let answer = match state.terminal_rule {
        TerminalRule::FinalMarker => {
            let idx = body.rfind(FINAL_MARKER).ok_or(EnvError::MarkerMissing)?;
            let rest = body[idx + FINAL_MARKER.len()..].trim();
            yes_no(rest)
        }
        TerminalRule::TerminateAction { argument } => {
            let action = Action::from_json(body).map_err(|_| EnvError::MarkerMissing)?;
            if action.name != TERMINATE {
                return Err(EnvError::MarkerMissing);
            }
            action.arg_str(argument).unwrap_or_default().trim().to_string()
        }
        TerminalRule::Moderator | TerminalRule::DirectAnswer => answer_line(body).unwrap_or_default(),
    };
    if answer.is_empty() {
        return Err(EnvError::MarkerMissing);
    }
    Ok(answer)
}
