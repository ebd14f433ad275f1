use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::trajectory::canonical_json;

/// Observation returned for an exam or test the case does not contain.
pub const NOT_AVAILABLE: &str = "not available";

#[derive(Debug, Error)]
pub enum VignetteError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("vignette is not valid JSON: {0}")]
    Json(String),
    #[error("vignette lacks `{0}`")]
    Missing(&'static str),
    #[error("vignette has an empty correct diagnosis")]
    EmptyDiagnosis,
    #[error("presentation reveals `{0}`, which must be requested")]
    LeakedFinding(String),
}

/// Structured OSCE case: what the patient tells, what exams and tests show.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientVignette {
    pub objective: String,
    pub patient_actor: Map<String, Value>,
    pub physical_examination_findings: Map<String, Value>,
    pub test_results: Map<String, Value>,
    pub correct_diagnosis: String,
}

/// Lowercase, `_` and `-` as spaces, whitespace collapsed.
fn key_norm(k: &str) -> String {
    k.to_lowercase().replace(['_', '-'], " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Option<&'a Value> {
    let want = key_norm(name);
    obj.iter().find(|(k, _)| key_norm(k) == want).map(|(_, v)| v)
}

fn keys_deep(obj: &Map<String, Value>, out: &mut Vec<String>) {
    for (k, v) in obj {
        out.push(key_norm(k));
        if let Value::Object(inner) = v {
            keys_deep(inner, out);
        }
    }
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => canonical_json(other),
    }
}

fn render_block(obj: &Map<String, Value>, indent: usize, out: &mut String) {
    for (k, v) in obj {
        let label = k.replace('_', " ");
        let pad = "  ".repeat(indent);
        match v {
            Value::Object(inner) => {
                out.push_str(&format!("{pad}{label}:\n"));
                render_block(inner, indent + 1, out);
            }
            Value::Array(items) => {
                let items: Vec<String> = items.iter().map(render_value).collect();
                out.push_str(&format!("{pad}{label}: {}\n", items.join(", ")));
            }
            other => out.push_str(&format!("{pad}{label}: {}\n", render_value(other))),
        }
    }
}

impl PatientVignette {
    /// Parse an OSCE document, with or without the `OSCE_Examination` wrapper.
    pub fn from_json(text: &str) -> Result<Self, VignetteError> {
        let value: Value = serde_json::from_str(text).map_err(|e| VignetteError::Json(e.to_string()))?;
        Self::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Self, VignetteError> {
        let root = value.as_object().ok_or(VignetteError::Missing("OSCE_Examination"))?;
        let root = match field(root, "OSCE_Examination") {
            Some(Value::Object(inner)) => inner,
            _ => root,
        };
        let object = |name: &'static str| match field(root, name) {
            Some(Value::Object(m)) => Ok(m.clone()),
            None => Ok(Map::new()),
            Some(_) => Err(VignetteError::Missing(name)),
        };
        let v = PatientVignette {
            objective: field(root, "Objective_for_Doctor").map(render_value).unwrap_or_default(),
            patient_actor: match field(root, "Patient_Actor") {
                Some(Value::Object(m)) => m.clone(),
                _ => return Err(VignetteError::Missing("Patient_Actor")),
            },
            physical_examination_findings: object("Physical_Examination_Findings")?,
            test_results: object("Test_Results")?,
            correct_diagnosis: field(root, "Correct_Diagnosis")
                .and_then(Value::as_str)
                .ok_or(VignetteError::Missing("Correct_Diagnosis"))?
                .to_string(),
        };
        v.check()?;
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self, VignetteError> {
        let text = fs::read_to_string(path)
            .map_err(|e| VignetteError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<(), VignetteError> {
        if self.correct_diagnosis.trim().is_empty() {
            return Err(VignetteError::EmptyDiagnosis);
        }
        let mut requestable = Vec::new();
        keys_deep(&self.physical_examination_findings, &mut requestable);
        keys_deep(&self.test_results, &mut requestable);
        let mut presented = Vec::new();
        keys_deep(&self.patient_actor, &mut presented);
        if let Some(k) = presented.into_iter().find(|k| requestable.contains(k)) {
            return Err(VignetteError::LeakedFinding(k));
        }
        Ok(())
    }

    /// Patient-reported information only.
    pub fn presentation(&self) -> String {
        let mut out = String::new();
        render_block(&self.patient_actor, 0, &mut out);
        out.trim_end().to_string()
    }

    pub fn available_exams(&self) -> Vec<&str> {
        self.physical_examination_findings.keys().map(String::as_str).collect()
    }

    pub fn available_tests(&self) -> Vec<&str> {
        self.test_results.keys().map(String::as_str).collect()
    }

    pub fn exam(&self, name: &str) -> String {
        lookup(&self.physical_examination_findings, name)
    }

    pub fn test(&self, name: &str) -> String {
        lookup(&self.test_results, name)
    }

    /// Every string an observation may legitimately equal: string leaves and
    /// canonical JSON of every object or array value, at any depth.
    pub fn observable_values(&self) -> Vec<String> {
        fn walk(v: &Value, out: &mut Vec<String>) {
            out.push(render_value(v));
            match v {
                Value::Object(m) => m.values().for_each(|x| walk(x, out)),
                Value::Array(a) => a.iter().for_each(|x| walk(x, out)),
                _ => {}
            }
        }
        let mut out = Vec::new();
        for m in [&self.physical_examination_findings, &self.test_results] {
            m.values().for_each(|v| walk(v, &mut out));
        }
        out
    }
}

/// Case-insensitive lookup with `_`/space unified; one nested level as fallback.
fn lookup(map: &Map<String, Value>, name: &str) -> String {
    if let Some(v) = field(map, name) {
        return render_value(v);
    }
    for v in map.values() {
        if let Value::Object(inner) = v {
            if let Some(found) = field(inner, name) {
                return render_value(found);
            }
        }
    }
    NOT_AVAILABLE.to_string()
}

/// Vignettes on disk under `<root>/<dataset>/<case>.json`.
#[derive(Debug, Default, Clone)]
pub struct VignetteStore {
    cases: BTreeMap<(String, String), PatientVignette>,
}

impl VignetteStore {
    pub fn load(root: &Path) -> Result<Self, VignetteError> {
        let io =
            |p: &Path, e: std::io::Error| VignetteError::Io { path: p.display().to_string(), message: e.to_string() };
        let mut cases = BTreeMap::new();
        for dataset in fs::read_dir(root).map_err(|e| io(root, e))? {
            let dataset = dataset.map_err(|e| io(root, e))?.path();
            if !dataset.is_dir() {
                continue;
            }
            let ds_name = dataset.file_name().unwrap_or_default().to_string_lossy().into_owned();
            for case in fs::read_dir(&dataset).map_err(|e| io(&dataset, e))? {
                let path = case.map_err(|e| io(&dataset, e))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let case_name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let v = PatientVignette::load(&path).map_err(|e| match e {
                    VignetteError::Io { .. } => e,
                    other => VignetteError::Io { path: path.display().to_string(), message: other.to_string() },
                })?;
                cases.insert((ds_name.clone(), case_name), v);
            }
        }
        Ok(VignetteStore { cases })
    }

    pub fn insert(&mut self, dataset: &str, case: &str, v: PatientVignette) {
        self.cases.insert((dataset.to_string(), case.to_string()), v);
    }

    pub fn get(&self, dataset: &str, case: &str) -> Option<&PatientVignette> {
        self.cases.get(&(dataset.to_string(), case.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &PatientVignette)> {
        self.cases.iter()
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn case() -> Value {
        json!({"OSCE_Examination": {
            "Objective_for_Doctor": "Diagnose the patient's condition",
            "Patient_Actor": {
                "Demographics": "45-year-old male",
                "History": "Three weeks of cough",
                "Symptoms": {"Primary_Symptom": "cough", "Secondary_Symptoms": ["night sweats", "weight loss"]},
                "Past_Medical_History": "none", "Social_History": "smoker", "Review_of_Systems": "fatigue"
            },
            "Physical_Examination_Findings": {
                "Vital_Signs": {"Temperature": "36.8 C", "Heart_Rate": "82"},
                "Respiratory_Examination": "Crackles at the right base"
            },
            "Test_Results": {"Imaging": {"Chest_X-Ray": "Right upper lobe cavitation"}},
            "Correct_Diagnosis": "Pulmonary Tuberculosis"
        }})
    }

    #[test]
    fn exam_lookup_is_verbatim() {
        let v = PatientVignette::from_value(&case()).unwrap();
        assert_eq!(v.exam("Vital_Signs"), r#"{"Heart_Rate":"82","Temperature":"36.8 C"}"#);
        assert_eq!(v.exam("respiratory examination"), "Crackles at the right base");
        assert_eq!(v.test("Chest X-Ray"), "Right upper lobe cavitation");
        assert_eq!(v.test("MRI"), NOT_AVAILABLE);
        assert_eq!(v.exam("Heart rate"), "82");
        for obs in [v.exam("Vital_Signs"), v.test("chest_x_ray")] {
            assert!(v.observable_values().contains(&obs));
        }
    }

    #[test]
    fn presentation_hides_findings() {
        let v = PatientVignette::from_value(&case()).unwrap();
        let p = v.presentation();
        assert!(p.contains("night sweats, weight loss"));
        assert!(!p.contains("Crackles") && !p.contains("cavitation"));
    }

    #[test]
    fn rejects_leaks_and_empty_diagnosis() {
        let mut leaked = case();
        leaked["OSCE_Examination"]["Patient_Actor"]["Vital_Signs"] = json!("fever");
        assert!(matches!(PatientVignette::from_value(&leaked), Err(VignetteError::LeakedFinding(_))));
        let mut empty = case();
        empty["OSCE_Examination"]["Correct_Diagnosis"] = json!(" ");
        assert!(matches!(PatientVignette::from_value(&empty), Err(VignetteError::EmptyDiagnosis)));
    }
}
