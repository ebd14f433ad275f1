use serde::{Deserialize, Serialize};

use super::prompts;
use crate::trajectory::{EnvironmentId, ParamType, ToolSchema};

/// How an episode in an environment ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalRule {
    /// Final gpt turn containing `[FINAL] <answer>`.
    FinalMarker,
    /// `Terminate` action carrying the named argument.
    TerminateAction { argument: &'static str },
    /// Moderator vote after the last protocol stage.
    Moderator,
    /// Single direct answer.
    DirectAnswer,
}

/// Definition of one environment: action schemas, depth cap, terminal rule, prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub environment_id: EnvironmentId,
    pub t_max: usize,
    pub tool_schemas: Vec<ToolSchema>,
    pub terminal_rule: TerminalRule,
    pub system_prompt: String,
}

pub const TERMINATE: &str = "Terminate";

/// Collaboration protocol stage names, used as function_call action names.
pub mod stage {
    pub const ASSESS: &str = "AssessDifficulty";
    pub const EXPERT_ANSWER: &str = "ExpertAnswer";
    pub const RECRUIT: &str = "RecruitExperts";
    pub const ANALYSIS: &str = "ExpertAnalysis";
    pub const DEBATE: &str = "Debate";
    pub const SYNTHESIZE: &str = "Synthesize";
}

fn image_tool(name: &str, description: &str) -> ToolSchema {
    ToolSchema::new(name, description).param("image_path", ParamType::String, "Path of the input image.", true)
}

fn medrax_tools() -> Vec<ToolSchema> {
    vec![
        image_tool("ChestXRayClassifier", "Probabilities for 14 chest pathologies."),
        image_tool("ChestXRaySegmentation", "Segmentation mask and region statistics for chest anatomy.").param(
            "anatomy",
            ParamType::String,
            "Structure to segment.",
            false,
        ),
        image_tool("CheXagentVQA", "Free-text answer to a question about a chest X-ray.").param(
            "question",
            ParamType::String,
            "Question about the image.",
            true,
        ),
        image_tool("LlavaMedVQA", "Free-text answer to a question about a medical image.").param(
            "question",
            ParamType::String,
            "Question about the image.",
            true,
        ),
        image_tool("XRayPhraseGrounding", "Bounding boxes for a findings phrase.").param(
            "phrase",
            ParamType::String,
            "Phrase to ground.",
            true,
        ),
        image_tool("ChestXRayReportGenerator", "Structured radiology report."),
        ToolSchema::new("DICOMProcessor", "Metadata and pixel data from a DICOM file.").param(
            "dicom_path",
            ParamType::String,
            "Path of the DICOM file.",
            true,
        ),
        image_tool("ImageVisualizer", "Renders an image with optional annotations.").param(
            "annotations",
            ParamType::String,
            "Annotation description.",
            false,
        ),
    ]
}

fn interleaved_tools() -> Vec<ToolSchema> {
    let id = "Image identifier: img_original, img_last or img_round_N.";
    vec![
        ToolSchema::new("ZoomInSubfigure", "Crops the image to a region given on a 0-1000 normalized grid.")
            .param("image", ParamType::String, id, true)
            .param("param", ParamType::Array, "Bounding box [x1, y1, x2, y2].", true),
        ToolSchema::new("SegmentRegionAroundPoint", "Segments the region around a point on a 0-1000 grid.")
            .param("image", ParamType::String, id, true)
            .param("param", ParamType::String, "Coordinates as x=\"..\" y=\"..\".", true),
        ToolSchema::new("BioMedParseTextSeg", "Text-prompted biomedical segmentation.")
            .param("image", ParamType::String, id, true)
            .param("param", ParamType::String, "Semicolon-separated noun phrases.", true),
        ToolSchema::new("OCR", "Extracts text from the image.").param("image", ParamType::String, id, true),
        ToolSchema::new(TERMINATE, "Ends the episode with a short final answer.").param(
            "ans",
            ParamType::String,
            "Final answer.",
            true,
        ),
    ]
}

fn collaboration_stages() -> Vec<ToolSchema> {
    vec![
        ToolSchema::new(stage::ASSESS, "Classify the query as basic, intermediate or advanced."),
        ToolSchema::new(stage::EXPERT_ANSWER, "Single expert answers a basic query."),
        ToolSchema::new(stage::RECRUIT, "Recruit three experts with different specialties."),
        ToolSchema::new(stage::ANALYSIS, "Independent analysis by one recruited expert.").param(
            "expert",
            ParamType::String,
            "Expert specialty.",
            true,
        ),
        ToolSchema::new(stage::DEBATE, "One expert's contribution to a debate round.")
            .param("expert", ParamType::String, "Expert specialty.", true)
            .param("round", ParamType::Integer, "Debate round, starting at 1.", true),
        ToolSchema::new(stage::SYNTHESIZE, "Summarize the expert reports into one analysis."),
    ]
}

fn simulation_tools() -> Vec<ToolSchema> {
    vec![
        ToolSchema::new("RequestPhysicalExam", "Findings of one physical examination.").param(
            "exam",
            ParamType::String,
            "Examination name from the available list.",
            true,
        ),
        ToolSchema::new("RequestTest", "Result of one diagnostic test.").param(
            "test",
            ParamType::String,
            "Test name from the available list.",
            true,
        ),
        ToolSchema::new(TERMINATE, "Ends the encounter with the final diagnosis.").param(
            "diagnosis",
            ParamType::String,
            "Disease or condition name.",
            true,
        ),
    ]
}

impl EnvironmentSpec {
    /// Default definition with the standard depth cap.
    pub fn for_env(id: EnvironmentId) -> Self {
        let (tool_schemas, terminal_rule, system_prompt) = match id {
            EnvironmentId::ToolCalling => (medrax_tools(), TerminalRule::FinalMarker, prompts::TOOL_CALLING),
            EnvironmentId::Interleaved => {
                (interleaved_tools(), TerminalRule::TerminateAction { argument: "ans" }, prompts::INTERLEAVED)
            }
            EnvironmentId::Collaboration => (collaboration_stages(), TerminalRule::Moderator, prompts::COLLABORATION),
            EnvironmentId::Simulation => {
                (simulation_tools(), TerminalRule::TerminateAction { argument: "diagnosis" }, prompts::SIMULATION)
            }
            EnvironmentId::Direct => (Vec::new(), TerminalRule::DirectAnswer, prompts::DIRECT),
        };
        EnvironmentSpec {
            environment_id: id,
            t_max: id.default_t_max(),
            tool_schemas,
            terminal_rule,
            system_prompt: system_prompt.to_string(),
        }
    }

    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    pub fn schema(&self, name: &str) -> Option<&ToolSchema> {
        self.tool_schemas.iter().find(|s| s.name == name)
    }

    /// Schemas of actions that run a tool executor. Collaboration stages are
    /// answered by policies and `Terminate` ends the episode, so neither counts.
    pub fn executable(&self) -> impl Iterator<Item = &ToolSchema> {
        let staged = self.environment_id == EnvironmentId::Collaboration;
        self.tool_schemas.iter().filter(move |s| !staged && s.name != TERMINATE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_caps() {
        let caps: Vec<usize> = EnvironmentId::AGENTIC.iter().map(|e| EnvironmentSpec::for_env(*e).t_max).collect();
        assert_eq!(caps, [4, 6, 12, 12]);
    }

    #[test]
    fn schema_names_are_unique() {
        for id in EnvironmentId::AGENTIC {
            let spec = EnvironmentSpec::for_env(id);
            let mut names: Vec<_> = spec.tool_schemas.iter().map(|s| &s.name).collect();
            let n = names.len();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), n, "{id}");
        }
    }
}
