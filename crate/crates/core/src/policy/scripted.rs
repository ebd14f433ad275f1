use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{PolicyError, PolicyRequest, PolicyRole, Reply};

/// One line of a scripted fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub fingerprint: String,
    pub role: PolicyRole,
    pub content: String,
}

pub type Responder = dyn Fn(&PolicyRequest) -> Option<String> + Send + Sync;

/// Fixture-backed policy.
///
/// Lookup order: exact `(role, fingerprint)` entry, then the programmatic
/// responder, then the default reply. When recording is on, every reply is
/// logged as a [`FixtureEntry`] so a run can be replayed from a file.
#[derive(Default)]
pub struct ScriptedPolicy {
    entries: HashMap<(PolicyRole, String), String>,
    responder: Option<Box<Responder>>,
    default: Option<String>,
    recording: Option<Mutex<Vec<FixtureEntry>>>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, role: PolicyRole, fingerprint: impl Into<String>, content: impl Into<String>) {
        self.entries.insert((role, fingerprint.into()), content.into());
    }

    pub fn with_default(mut self, content: impl Into<String>) -> Self {
        self.default = Some(content.into());
        self
    }

    pub fn with_responder(mut self, f: impl Fn(&PolicyRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn recording(mut self) -> Self {
        self.recording = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let mut p = Self::new();
        for e in entries {
            p.insert(e.role, e.fingerprint, e.content);
        }
        p
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let file = fs::File::open(path).map_err(|e| PolicyError::Config(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| PolicyError::Config(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line)
                .map_err(|e| PolicyError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Recorded entries, sorted and deduplicated by `(role, fingerprint)`.
    pub fn recorded(&self) -> Vec<FixtureEntry> {
        let mut out = self.recording.as_ref().map(|m| m.lock().expect("recording lock").clone()).unwrap_or_default();
        out.sort_by(|a, b| (a.role, &a.fingerprint).cmp(&(b.role, &b.fingerprint)));
        out.dedup_by(|a, b| a.role == b.role && a.fingerprint == b.fingerprint);
        out
    }

    pub(crate) fn respond(&self, req: &PolicyRequest) -> Result<Reply, PolicyError> {
        let fingerprint = req.fingerprint();
        let content = self
            .entries
            .get(&(req.role, fingerprint.clone()))
            .cloned()
            .or_else(|| self.responder.as_ref().and_then(|f| f(req)))
            .or_else(|| self.default.clone())
            .ok_or_else(|| PolicyError::FixtureMiss { role: req.role, fingerprint: fingerprint.clone() })?;
        if let Some(rec) = &self.recording {
            rec.lock().expect("recording lock").push(FixtureEntry {
                fingerprint,
                role: req.role,
                content: content.clone(),
            });
        }
        Ok(Reply { content, usage: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Message, PolicyHandle};

    #[test]
    fn recorded_entries_replay_identically() {
        let live =
            ScriptedPolicy::new().with_responder(|r: &PolicyRequest| Some(r.last_content().to_uppercase())).recording();
        let live = PolicyHandle::scripted(PolicyRole::Teacher, live);
        let reqs: Vec<_> = ["a b", "c d"]
            .iter()
            .map(|q| PolicyRequest::new(PolicyRole::Teacher, "sys", vec![Message::human(*q)]))
            .collect();
        let answers: Vec<_> = reqs.iter().map(|r| live.complete(r).unwrap().content).collect();
        let crate::policy::Backend::Scripted(s) = &live.backend else { unreachable!() };
        let replay = PolicyHandle::scripted(PolicyRole::Teacher, ScriptedPolicy::from_entries(s.recorded()));
        for (r, a) in reqs.iter().zip(answers) {
            assert_eq!(replay.complete(r).unwrap().content, a);
        }
    }

    #[test]
    fn loads_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        fs::write(&path, "{\"fingerprint\":\"ab\",\"role\":\"student\",\"content\":\"yes\"}\n\n").unwrap();
        let p = ScriptedPolicy::load(&path).unwrap();
        assert_eq!(p.len(), 1);
        fs::write(&path, "{\"fingerprint\":\"ab\"}\n").unwrap();
        assert!(matches!(ScriptedPolicy::load(&path), Err(PolicyError::Config(_))));
    }
}
