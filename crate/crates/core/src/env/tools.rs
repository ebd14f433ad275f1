use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::spec::EnvironmentSpec;
use super::vignette::PatientVignette;
use super::EnvError;
use crate::seed::stable_hex;
use crate::trajectory::canonical_json;

/// Fixture key matching any arguments.
pub const ANY_ARGUMENTS: &str = "*";

/// Hash of canonical JSON arguments, as used in tool fixture keys.
pub fn arguments_hash(args: &Map<String, Value>) -> String {
    stable_hex(&[&canonical_json(&Value::Object(args.clone()))])
}

/// One line of a scripted tool fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolFixture {
    pub sample_id: String,
    pub tool: String,
    pub arguments_hash: String,
    pub observation_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub produced_image: Option<String>,
}

/// Read-only fixture table shared by all episodes.
#[derive(Debug, Default, Clone)]
pub struct ToolFixtures {
    by_key: HashMap<(String, String, String), ToolFixture>,
}

impl ToolFixtures {
    pub fn new(entries: impl IntoIterator<Item = ToolFixture>) -> Self {
        let mut by_key = HashMap::new();
        for f in entries {
            by_key.insert((f.sample_id.clone(), f.tool.clone(), f.arguments_hash.clone()), f);
        }
        ToolFixtures { by_key }
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let err = |m: String| EnvError::Config(format!("{}: {m}", path.display()));
        let file = fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?);
        }
        Ok(Self::new(entries))
    }

    /// Exact arguments first, then the wildcard entry.
    pub fn get(&self, sample_id: &str, tool: &str, args: &Map<String, Value>) -> Option<&ToolFixture> {
        let key = |h: String| (sample_id.to_string(), tool.to_string(), h);
        self.by_key.get(&key(arguments_hash(args))).or_else(|| self.by_key.get(&key(ANY_ARGUMENTS.to_string())))
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorBackend {
    Scripted,
    Builtin,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolExecutor {
    pub name: String,
    pub backend: ExecutorBackend,
}

/// Image produced by a tool.
#[derive(Debug, Clone)]
pub enum ProducedImage {
    /// Reference to an image that already exists (scripted or remote tools).
    Reference(String),
    /// Pixels created by a builtin tool; the episode stores them.
    Raster(DynamicImage),
}

#[derive(Debug, Clone)]
pub struct ToolOutput {
    pub text: String,
    pub image: Option<ProducedImage>,
}

impl ToolOutput {
    pub fn text(text: impl Into<String>) -> Self {
        ToolOutput { text: text.into(), image: None }
    }
}

/// What a tool invocation may read.
pub struct ToolContext<'a> {
    pub sample_id: &'a str,
    pub vignette: Option<&'a PatientVignette>,
    /// Pixels of the image named by the `image` argument, when resolved.
    pub input_image: Option<Arc<DynamicImage>>,
}

#[derive(Debug, Serialize)]
struct RemoteToolRequest<'a> {
    sample_id: &'a str,
    tool: &'a str,
    arguments: &'a Map<String, Value>,
}

#[derive(Debug, Deserialize)]
struct RemoteToolResponse {
    observation: String,
    #[serde(default)]
    produced_image: Option<String>,
}

/// Executors for every action of one environment.
#[derive(Clone)]
pub struct ToolBox {
    executors: BTreeMap<String, ExecutorBackend>,
    fixtures: Arc<ToolFixtures>,
    remote: Option<(String, ureq::Agent)>,
}

impl std::fmt::Debug for ToolBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolBox")
            .field("executors", &self.executors)
            .field("fixtures", &self.fixtures.len())
            .field("remote", &self.remote.as_ref().map(|r| &r.0))
            .finish()
    }
}

fn builtin(name: &str) -> bool {
    matches!(name, "ZoomInSubfigure" | "RequestPhysicalExam" | "RequestTest")
}

impl ToolBox {
    /// Builtins where available; every other tool is scripted, or remote when
    /// an endpoint is given.
    pub fn for_spec(spec: &EnvironmentSpec, fixtures: Arc<ToolFixtures>, remote_endpoint: Option<&str>) -> Self {
        let executors = spec
            .executable()
            .map(|s| {
                let backend = if builtin(&s.name) {
                    ExecutorBackend::Builtin
                } else if remote_endpoint.is_some() {
                    ExecutorBackend::Remote
                } else {
                    ExecutorBackend::Scripted
                };
                (s.name.clone(), backend)
            })
            .collect();
        let remote = remote_endpoint.map(|url| {
            let agent: ureq::Agent =
                ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(120))).build().into();
            (url.to_string(), agent)
        });
        ToolBox { executors, fixtures, remote }
    }

    pub fn executors(&self) -> Vec<ToolExecutor> {
        self.executors.iter().map(|(name, backend)| ToolExecutor { name: name.clone(), backend: *backend }).collect()
    }

    /// True when executor names equal the spec's executable schema names.
    pub fn covers(&self, spec: &EnvironmentSpec) -> bool {
        let names: Vec<&str> = spec.executable().map(|s| s.name.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.iter().copied().eq(self.executors.keys().map(String::as_str))
    }

    /// Run one tool. `Err` carries failure text that becomes the observation.
    pub fn execute(&self, name: &str, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
        match self.executors.get(name) {
            None => Err(format!("{name} failed: no executor")),
            Some(ExecutorBackend::Builtin) => run_builtin(name, args, ctx),
            Some(ExecutorBackend::Scripted) => match self.fixtures.get(ctx.sample_id, name, args) {
                Some(f) => Ok(ToolOutput {
                    text: f.observation_text.clone(),
                    image: f.produced_image.clone().map(ProducedImage::Reference),
                }),
                None => Err(format!("{name} failed: no output available")),
            },
            Some(ExecutorBackend::Remote) => {
                let (url, agent) = self.remote.as_ref().expect("remote executors need an endpoint");
                let body = RemoteToolRequest { sample_id: ctx.sample_id, tool: name, arguments: args };
                let mut resp = agent.post(url).send_json(&body).map_err(|e| format!("{name} failed: {e}"))?;
                let parsed: RemoteToolResponse =
                    resp.body_mut().read_json().map_err(|e| format!("{name} failed: {e}"))?;
                Ok(ToolOutput { text: parsed.observation, image: parsed.produced_image.map(ProducedImage::Reference) })
            }
        }
    }
}

fn run_builtin(name: &str, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<ToolOutput, String> {
    match name {
        "RequestPhysicalExam" | "RequestTest" => {
            let v = ctx.vignette.ok_or_else(|| format!("{name} failed: no patient case loaded"))?;
            let key = if name == "RequestTest" { "test" } else { "exam" };
            let what = args.get(key).and_then(Value::as_str).unwrap_or_default();
            Ok(ToolOutput::text(if name == "RequestTest" { v.test(what) } else { v.exam(what) }))
        }
        "ZoomInSubfigure" => {
            let img = ctx.input_image.as_ref().ok_or("ZoomIn failed: input image unavailable")?;
            let bbox = parse_box(args.get("param")).ok_or("ZoomIn failed: param must be [x1, y1, x2, y2]")?;
            let cropped = zoom(img, bbox)?;
            let (w, h) = (cropped.width(), cropped.height());
            Ok(ToolOutput { text: format!("Zoomed region {w}x{h} px."), image: Some(ProducedImage::Raster(cropped)) })
        }
        other => Err(format!("{other} failed: no builtin")),
    }
}

fn parse_box(v: Option<&Value>) -> Option<[f64; 4]> {
    let a = v?.as_array()?;
    if a.len() != 4 {
        return None;
    }
    let mut out = [0.0; 4];
    for (o, x) in out.iter_mut().zip(a) {
        *o = x.as_f64()?;
    }
    Some(out)
}

/// Crop with box coordinates on a 0-1000 grid over each axis.
pub fn zoom(img: &DynamicImage, bbox: [f64; 4]) -> Result<DynamicImage, String> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let px = |v: f64, extent: f64| (v.clamp(0.0, 1000.0) * extent / 1000.0).round() as u32;
    let (x1, x2) = (px(bbox[0], w), px(bbox[2], w));
    let (y1, y2) = (px(bbox[1], h), px(bbox[3], h));
    if x2 <= x1 || y2 <= y1 {
        return Err("ZoomIn failed: cannot write empty image".to_string());
    }
    Ok(img.crop_imm(x1, y1, x2 - x1, y2 - y1))
}
