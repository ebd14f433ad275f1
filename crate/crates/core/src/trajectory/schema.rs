use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl ParamType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Number => v.is_number(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::Array => v.is_array(),
            ParamType::Object => v.is_object(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub kind: ParamType,
    pub description: String,
    pub required: bool,
}

/// JSON schema of one tool, as embedded in the `tools` field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("{tool}: missing required argument `{arg}`")]
    Missing { tool: String, arg: String },
    #[error("{tool}: argument `{arg}` should be {expected:?}")]
    WrongType { tool: String, arg: String, expected: ParamType },
    #[error("{tool}: unknown argument `{arg}`")]
    Unknown { tool: String, arg: String },
}

impl ToolSchema {
    pub fn new(name: &str, description: &str) -> Self {
        ToolSchema { name: name.into(), description: description.into(), parameters: BTreeMap::new() }
    }

    pub fn param(mut self, name: &str, kind: ParamType, description: &str, required: bool) -> Self {
        self.parameters.insert(name.into(), ParamSpec { kind, description: description.into(), required });
        self
    }

    pub fn validate(&self, args: &Map<String, Value>) -> Result<(), SchemaError> {
        for (name, spec) in &self.parameters {
            match args.get(name) {
                None if spec.required => {
                    return Err(SchemaError::Missing { tool: self.name.clone(), arg: name.clone() })
                }
                Some(v) if !spec.kind.accepts(v) => {
                    return Err(SchemaError::WrongType {
                        tool: self.name.clone(),
                        arg: name.clone(),
                        expected: spec.kind,
                    })
                }
                _ => {}
            }
        }
        if let Some(extra) = args.keys().find(|k| !self.parameters.contains_key(*k)) {
            return Err(SchemaError::Unknown { tool: self.name.clone(), arg: extra.clone() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn validates_arguments() {
        let s = ToolSchema::new("RequestTest", "Request a test.").param("test", ParamType::String, "Test name.", true);
        let ok = json!({"test": "MRI"});
        assert!(s.validate(ok.as_object().unwrap()).is_ok());
        assert!(matches!(s.validate(&Map::new()), Err(SchemaError::Missing { .. })));
        let bad = json!({"test": 3});
        assert!(matches!(s.validate(bad.as_object().unwrap()), Err(SchemaError::WrongType { .. })));
        let extra = json!({"test": "MRI", "urgent": true});
        assert!(matches!(s.validate(extra.as_object().unwrap()), Err(SchemaError::Unknown { .. })));
    }
}
