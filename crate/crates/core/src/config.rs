//! The `forge` configuration file: one JSON document whose defaults are the
//! reference constants, so an almost empty file is a complete setup.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::MatcherKind;
use crate::policy::{RecapFilter, RemoteConfig};
use crate::trajectory::EnvironmentId;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("config {key}: {message}")]
pub struct ConfigError {
    /// Dotted path of the offending key, `(file)` for file-level errors.
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub id: String,
    pub path: PathBuf,
    #[serde(default = "default_matcher")]
    pub matcher: MatcherKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_field: Option<String>,
}

fn default_matcher() -> MatcherKind {
    MatcherKind::Soft
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
    /// Reply used when a scripted fixture has no entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_reply: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
}

impl PolicyConfig {
    pub fn remote_config(&self) -> Option<RemoteConfig> {
        let mut c = RemoteConfig::new(self.endpoint.as_deref()?);
        if let Some(v) = self.max_in_flight {
            c.max_in_flight = v;
        }
        if let Some(v) = self.max_retries {
            c.max_retries = v;
        }
        if let Some(v) = self.timeout_ms {
            c.timeout_ms = v;
        }
        Some(c)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyMap {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student: Option<PolicyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<PolicyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<PolicyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recap: Option<PolicyConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    /// JSONL of recorded tool observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
    /// Remote tool server; used for tools without a built-in executor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vignette_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tier3Config {
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_schedule")]
    pub temperature_schedule: Vec<f64>,
    #[serde(default)]
    pub recap_filter: RecapFilter,
}

fn default_retries() -> u32 {
    8
}

fn default_schedule() -> Vec<f64> {
    vec![0.2, 0.7]
}

impl Default for Tier3Config {
    fn default() -> Self {
        Tier3Config {
            retries: default_retries(),
            temperature_schedule: default_schedule(),
            recap_filter: RecapFilter::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorConfig {
    #[serde(default = "default_length_bound")]
    pub length_bound: usize,
    #[serde(default = "default_depth_bounds")]
    pub depth_bounds: BTreeMap<EnvironmentId, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_path: Option<PathBuf>,
    /// `null` disables class balancing at assembly.
    #[serde(default = "default_majority_rate")]
    pub majority_rate: Option<f64>,
}

fn default_length_bound() -> usize {
    10_000
}

fn default_depth_bounds() -> BTreeMap<EnvironmentId, usize> {
    EnvironmentId::AGENTIC.iter().map(|e| (*e, e.default_t_max())).collect()
}

fn default_majority_rate() -> Option<f64> {
    Some(1.0 / 3.0)
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            length_bound: default_length_bound(),
            depth_bounds: default_depth_bounds(),
            lexicon_path: None,
            majority_rate: default_majority_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_threshold")]
    pub soft_match_threshold: f64,
    #[serde(default = "default_ngram")]
    pub ngram_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synonyms_path: Option<PathBuf>,
}

fn default_threshold() -> f64 {
    0.8
}

fn default_ngram() -> usize {
    8
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { soft_match_threshold: default_threshold(), ngram_n: default_ngram(), synonyms_path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeConfig {
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub env_map: BTreeMap<String, EnvironmentId>,
    #[serde(default)]
    pub policies: PolicyMap,
    #[serde(default)]
    pub tools: ToolConfig,
    #[serde(default)]
    pub tier3: Tier3Config,
    #[serde(default)]
    pub validator: ValidatorConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub global_seed: u64,
    /// Directory relative paths are resolved against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_workers() -> usize {
    4
}

impl Default for ForgeConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl ForgeConfig {
    /// Parses and checks a config document.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: ForgeConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let key = if key == "." { "(file)".to_string() } else { key };
            ConfigError::new(key, e.into_inner().to_string())
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.check()?;
        Ok(cfg)
    }

    /// Canonical JSON form; `from_json` of it yields the same config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let mut ids = std::collections::BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if d.id.trim().is_empty() {
                return Err(ConfigError::new(format!("datasets[{i}].id"), "empty dataset id"));
            }
            if !ids.insert(d.id.as_str()) {
                return Err(ConfigError::new(format!("datasets[{i}].id"), format!("duplicate dataset `{}`", d.id)));
            }
            if !self.env_map.contains_key(&d.id) {
                return Err(ConfigError::new(
                    format!("env_map.{}", d.id),
                    format!("dataset `{}` has no environment", d.id),
                ));
            }
        }
        if self.tier3.retries == 0 {
            return Err(ConfigError::new("tier3.retries", "must be at least 1"));
        }
        if self.tier3.temperature_schedule.is_empty() {
            return Err(ConfigError::new("tier3.temperature_schedule", "must not be empty"));
        }
        if let Some(t) = self.tier3.temperature_schedule.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(ConfigError::new("tier3.temperature_schedule", format!("invalid temperature {t}")));
        }
        for (env, bound) in &self.validator.depth_bounds {
            if *bound == 0 {
                return Err(ConfigError::new(format!("validator.depth_bounds.{env}"), "must be positive"));
            }
            if *env == EnvironmentId::Direct {
                return Err(ConfigError::new("validator.depth_bounds.direct", "direct answers have no depth bound"));
            }
        }
        if self.validator.length_bound == 0 {
            return Err(ConfigError::new("validator.length_bound", "must be positive"));
        }
        if let Some(r) = self.validator.majority_rate {
            if !(r > 0.0 && r <= 1.0) {
                return Err(ConfigError::new("validator.majority_rate", "must be in (0, 1]"));
            }
        }
        if !(self.eval.soft_match_threshold > 0.0 && self.eval.soft_match_threshold <= 1.0) {
            return Err(ConfigError::new("eval.soft_match_threshold", "must be in (0, 1]"));
        }
        if self.eval.ngram_n == 0 {
            return Err(ConfigError::new("eval.ngram_n", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(ConfigError::new("workers", "must be at least 1"));
        }
        let policies = [
            ("student", &self.policies.student),
            ("teacher", &self.policies.teacher),
            ("agent", &self.policies.agent),
            ("recap", &self.policies.recap),
        ];
        for (name, p) in policies {
            let Some(p) = p else { continue };
            match p.backend {
                BackendKind::Remote if p.endpoint.as_deref().is_none_or(str::is_empty) => {
                    return Err(ConfigError::new(
                        format!("policies.{name}.endpoint"),
                        "remote backend needs an endpoint",
                    ));
                }
                BackendKind::Scripted if p.fixture_path.is_none() && p.default_reply.is_none() => {
                    return Err(ConfigError::new(
                        format!("policies.{name}.fixture_path"),
                        "scripted backend needs a fixture file or a default reply",
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// `path` made absolute against the config directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetConfig> {
        self.datasets.iter().find(|d| d.id == id)
    }
}

/// Reads a config file; relative paths in it are relative to its directory.
pub fn load_config(path: &Path) -> Result<ForgeConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::new("(file)", format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    ForgeConfig::from_json(&text, &base)
}
