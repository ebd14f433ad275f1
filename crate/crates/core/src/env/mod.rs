//! Agent environments as deterministic, steppable state machines.
//!
//! Four interaction regimes share one episode model: continuous tool calling
//! (`[FINAL]` marker), interleaved image reasoning (image registry and a real
//! crop tool), multi-agent collaboration (staged debate protocol) and clinical
//! simulation (OSCE vignette lookups). A fifth, `direct`, is a single answer.

mod collaboration;
mod episode;
pub mod prompts;
mod runner;
mod spec;
mod tools;
mod vignette;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::PolicyError;
use crate::trajectory::{EnvironmentId, SchemaError};

pub use collaboration::{majority_vote, parse_difficulty, parse_experts, run_collaboration, Difficulty};
pub use episode::{extract_answer, reset, step, EpisodeState, Stage, StepOutcome};
pub use runner::{direct_answer, parse_move, run_direct, run_episode, Attempt, EpisodeResult, Move, Outcome, Strategy};
pub use spec::{stage, EnvironmentSpec, TerminalRule, TERMINATE};
pub use tools::{
    arguments_hash, zoom, ExecutorBackend, ProducedImage, ToolBox, ToolContext, ToolExecutor, ToolFixture,
    ToolFixtures, ToolOutput, ANY_ARGUMENTS,
};
pub use vignette::{PatientVignette, VignetteError, VignetteStore, NOT_AVAILABLE};

/// One input example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub sample_id: String,
    pub dataset_id: String,
    pub question: String,
    #[serde(default)]
    pub images: Vec<String>,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Vignette case name under `<vignette_dir>/<dataset_id>/`; defaults to the sample id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vignette: Option<String>,
}

impl Sample {
    pub fn new(sample_id: &str, dataset_id: &str, question: &str, gold_answer: &str) -> Self {
        Sample {
            sample_id: sample_id.into(),
            dataset_id: dataset_id.into(),
            question: question.into(),
            images: Vec::new(),
            gold_answer: gold_answer.into(),
            category: None,
            vignette: None,
        }
    }

    pub fn with_images(mut self, images: &[&str]) -> Self {
        self.images = images.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn check(&self) -> Result<(), EnvError> {
        if self.question.trim().is_empty() {
            return Err(EnvError::InvalidSample(format!("{}: empty question", self.sample_id)));
        }
        if self.gold_answer.trim().is_empty() {
            return Err(EnvError::InvalidSample(format!("{}: empty gold answer", self.sample_id)));
        }
        Ok(())
    }

    pub fn vignette_case(&self) -> &str {
        self.vignette.as_deref().unwrap_or(&self.sample_id)
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("simulation sample {0} has no vignette")]
    MissingVignette(String),
    #[error("sample {0} needs an input image")]
    MissingImage(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error(transparent)]
    SchemaViolation(#[from] SchemaError),
    #[error("depth cap {0} reached")]
    DepthExceeded(usize),
    #[error("episode already terminated")]
    Terminated,
    #[error("episode has not terminated")]
    NotTerminated,
    #[error("no final answer could be extracted")]
    MarkerMissing,
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("environment configuration: {0}")]
    Config(String),
    #[error("artifact write failed: {0}")]
    Artifact(String),
}

/// Where episodes read input images and write produced ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpisodeOptions {
    /// Base for relative image references.
    pub image_root: Option<PathBuf>,
    /// Produced images are written under `<artifact_dir>/<sample_id>/attempt_<k>/`.
    pub artifact_dir: Option<PathBuf>,
}

/// An environment ready to run episodes: definition, executors, case store.
#[derive(Debug, Clone)]
pub struct Environment {
    pub spec: EnvironmentSpec,
    pub tools: ToolBox,
    pub vignettes: Arc<VignetteStore>,
    pub options: EpisodeOptions,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec, tools: ToolBox) -> Self {
        Environment { spec, tools, vignettes: Arc::default(), options: EpisodeOptions::default() }
    }

    /// Default spec with scripted executors from `fixtures`.
    pub fn scripted(id: EnvironmentId, fixtures: Arc<ToolFixtures>) -> Self {
        let spec = EnvironmentSpec::for_env(id);
        let tools = ToolBox::for_spec(&spec, fixtures, None);
        Environment::new(spec, tools)
    }

    pub fn with_vignettes(mut self, store: Arc<VignetteStore>) -> Self {
        self.vignettes = store;
        self
    }

    pub fn with_options(mut self, options: EpisodeOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.spec.t_max = t_max;
        self
    }

    pub fn vignette_for(&self, sample: &Sample) -> Option<&PatientVignette> {
        self.vignettes.get(&sample.dataset_id, sample.vignette_case())
    }
}
