use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Placeholder marking one image inside turn content.
pub const IMAGE_TOKEN: &str = "<image>";

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Human,
    FunctionCall,
    Observation,
    Gpt,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Human => "human",
            Role::FunctionCall => "function_call",
            Role::Observation => "observation",
            Role::Gpt => "gpt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "human" => Some(Role::Human),
            "function_call" => Some(Role::FunctionCall),
            "observation" => Some(Role::Observation),
            "gpt" => Some(Role::Gpt),
            _ => None,
        }
    }
}

/// One conversation turn.
///
/// `content` is stored verbatim; `think` is the reasoning block extracted from
/// it for `function_call` and `gpt` turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    pub think: Option<String>,
    pub images: Vec<String>,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>, images: Vec<String>) -> Self {
        let content = content.into();
        let think = match role {
            Role::FunctionCall | Role::Gpt => split_think(&content).0.map(str::to_string),
            Role::Human | Role::Observation => None,
        };
        Turn { role, content, think, images }
    }

    pub fn human(content: impl Into<String>, images: Vec<String>) -> Self {
        Turn::new(Role::Human, content, images)
    }

    pub fn observation(content: impl Into<String>, images: Vec<String>) -> Self {
        Turn::new(Role::Observation, content, images)
    }

    pub fn function_call(think: &str, action: &Action) -> Self {
        Turn::new(Role::FunctionCall, render_with_think(Some(think), &action.to_json()), Vec::new())
    }

    pub fn gpt(think: Option<&str>, body: &str) -> Self {
        Turn::new(Role::Gpt, render_with_think(think, body), Vec::new())
    }

    /// Content after the reasoning block.
    pub fn body(&self) -> &str {
        match self.role {
            Role::FunctionCall | Role::Gpt => split_think(&self.content).1,
            Role::Human | Role::Observation => &self.content,
        }
    }

    /// Parse the JSON action of a `function_call` turn (or a gpt turn that
    /// carries a `Terminate` action).
    pub fn action(&self) -> Result<Action, ActionParseError> {
        let mut action = Action::from_json(self.body())?;
        action.think = self.think.clone().unwrap_or_default();
        Ok(action)
    }
}

/// `<think>…</think>\n` followed by the body; the body alone when there is no reasoning.
pub fn render_with_think(think: Option<&str>, body: &str) -> String {
    match think {
        Some(t) => format!("{THINK_OPEN}{t}{THINK_CLOSE}\n{body}"),
        None => body.to_string(),
    }
}

/// Split a leading `<think>` block from the rest of the content.
pub fn split_think(content: &str) -> (Option<&str>, &str) {
    if let Some(rest) = content.strip_prefix(THINK_OPEN) {
        if let Some(end) = rest.find(THINK_CLOSE) {
            let think = &rest[..end];
            let body = &rest[end + THINK_CLOSE.len()..];
            return (Some(think), body.trim_start());
        }
    }
    (None, content)
}

pub fn count_image_tokens(content: &str) -> usize {
    content.matches(IMAGE_TOKEN).count()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionParseError {
    #[error("action is not valid JSON: {0}")]
    Json(String),
    #[error("action JSON is not an object")]
    NotObject,
    #[error("action has no name")]
    MissingName,
    #[error("action arguments are not a JSON object")]
    BadArguments,
}

/// A JSON action: a tool or protocol stage with arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub name: String,
    pub arguments: Map<String, Value>,
    pub think: String,
}

impl Action {
    /// Panics when `arguments` is not an object; intended for literals.
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => panic!("action arguments must be an object, got {other}"),
        };
        Action { name: name.into(), arguments, think: String::new() }
    }

    pub fn with_think(mut self, think: impl Into<String>) -> Self {
        self.think = think.into();
        self
    }

    /// Canonical `{"arguments":{…},"name":"…"}` encoding.
    pub fn to_json(&self) -> String {
        let mut obj = Map::new();
        obj.insert("arguments".into(), Value::Object(self.arguments.clone()));
        obj.insert("name".into(), Value::String(self.name.clone()));
        Value::Object(obj).to_string()
    }

    pub fn from_json(text: &str) -> Result<Self, ActionParseError> {
        let value: Value = serde_json::from_str(text.trim()).map_err(|e| ActionParseError::Json(e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(ActionParseError::NotObject);
        };
        let name = match obj.remove("name") {
            Some(Value::String(s)) if !s.trim().is_empty() => s,
            _ => return Err(ActionParseError::MissingName),
        };
        let arguments = match obj.remove("arguments") {
            Some(Value::Object(m)) => m,
            None => Map::new(),
            Some(_) => return Err(ActionParseError::BadArguments),
        };
        Ok(Action { name, arguments, think: String::new() })
    }

    /// String argument lookup.
    pub fn arg_str(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).and_then(Value::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn think_is_extracted_and_reembedded() {
        let a = Action::new("ZoomInSubfigure", json!({"image": "img_original", "param": [0, 0, 500, 500]}));
        let t = Turn::function_call("Look closer at the left lobe.", &a);
        assert_eq!(t.think.as_deref(), Some("Look closer at the left lobe."));
        assert!(t.content.starts_with("<think>Look closer"));
        let parsed = t.action().unwrap();
        assert_eq!(parsed.name, "ZoomInSubfigure");
        assert_eq!(parsed.arguments, a.arguments);
        assert_eq!(Turn::new(Role::FunctionCall, t.content.clone(), vec![]), t);
    }

    #[test]
    fn observations_never_extract_think() {
        let t = Turn::observation("<think>x</think>\nresult", vec![]);
        assert!(t.think.is_none());
    }

    #[test]
    fn action_errors() {
        assert!(matches!(Action::from_json("{\"name\": \"x\""), Err(ActionParseError::Json(_))));
        assert_eq!(Action::from_json("[1]"), Err(ActionParseError::NotObject));
        assert_eq!(Action::from_json("{\"arguments\": {}}"), Err(ActionParseError::MissingName));
        assert_eq!(Action::from_json("{\"name\": \"x\", \"arguments\": \"abc\"}"), Err(ActionParseError::BadArguments));
    }

    #[test]
    fn counts_image_tokens() {
        assert_eq!(count_image_tokens("<image><image>\nwhat is shown?"), 2);
        assert_eq!(count_image_tokens("no images"), 0);
    }
}
