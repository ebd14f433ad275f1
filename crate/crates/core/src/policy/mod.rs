//! Policy gateway.
//!
//! Every decision-making party (student, teacher, environment agent, recap
//! agent, experts) is reached through a [`PolicyHandle`]. Handles are backed
//! either by scripted fixtures or by a remote endpoint speaking the JSON wire
//! protocol documented in `docs/wire.md`.

mod recap;
mod remote;
mod scripted;

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::stable_hex;
use crate::trajectory::Role;

pub use recap::{
    recap, recap_json, validate_recap, Recap, RecapEntry, RecapFilter, RecapStep, Update, RECAP_SYSTEM_PROMPT,
};
pub use remote::{RemoteConfig, RemotePolicy};
pub use scripted::{FixtureEntry, Responder, ScriptedPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRole {
    Student,
    Teacher,
    Agent,
    Recap,
    Expert,
    Moderator,
    Patient,
}

impl PolicyRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyRole::Student => "student",
            PolicyRole::Teacher => "teacher",
            PolicyRole::Agent => "agent",
            PolicyRole::Recap => "recap",
            PolicyRole::Expert => "expert",
            PolicyRole::Moderator => "moderator",
            PolicyRole::Patient => "patient",
        }
    }
}

impl fmt::Display for PolicyRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default)]
    pub images: Vec<String>,
}

impl Message {
    pub fn human(content: impl Into<String>) -> Self {
        Message { role: Role::Human, content: content.into(), images: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_length: Option<u32>,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding { max_length: None, temperature: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRequest {
    pub role: PolicyRole,
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub decoding: Decoding,
}

impl PolicyRequest {
    pub fn new(role: PolicyRole, system_prompt: impl Into<String>, messages: Vec<Message>) -> Self {
        PolicyRequest { role, system_prompt: system_prompt.into(), messages, decoding: Decoding::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.decoding.seed = seed;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.decoding.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.messages.first() {
            None => Err(PolicyError::InvalidRequest("request has no messages".into())),
            Some(m) if m.role != Role::Human => {
                Err(PolicyError::InvalidRequest(format!("first message is {}, expected human", m.role.as_str())))
            }
            Some(_) => Ok(()),
        }
    }

    /// Stable key for scripted lookup: role, system prompt, message roles,
    /// contents and image ids, and the decoding seed. Image bytes never enter.
    pub fn fingerprint(&self) -> String {
        let seed = self.decoding.seed.to_string();
        let mut parts: Vec<&str> = vec![self.role.as_str(), &self.system_prompt];
        for m in &self.messages {
            parts.push(m.role.as_str());
            parts.push(&m.content);
            parts.extend(m.images.iter().map(String::as_str));
            parts.push("\u{1f}");
        }
        parts.push(&seed);
        stable_hex(&parts)
    }

    /// Last message content, convenient for scripted responders.
    pub fn last_content(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }

    pub fn prompt_text_words(&self) -> usize {
        word_count(&self.system_prompt) + self.messages.iter().map(|m| word_count(&m.content)).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_token_estimate: u64,
    pub completion_token_estimate: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_token_estimate + self.completion_token_estimate
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        self.prompt_token_estimate += rhs.prompt_token_estimate;
        self.completion_token_estimate += rhs.completion_token_estimate;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyResponse {
    pub content: String,
    pub usage: Usage,
    pub latency_ms: f64,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no scripted fixture for role {role} and fingerprint {fingerprint}")]
    FixtureMiss { role: PolicyRole, fingerprint: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("recap rejected: {0}")]
    RecapInvalid(String),
    #[error("policy configuration: {0}")]
    Config(String),
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Whitespace-token proxy: words × 1.3, rounded.
pub fn token_estimate(text: &str) -> u64 {
    words_to_tokens(word_count(text))
}

fn words_to_tokens(words: usize) -> u64 {
    (words as f64 * 1.3).round() as u64
}

/// Raw reply from a backend before accounting.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Reply {
    pub content: String,
    pub usage: Option<Usage>,
}

#[derive(Clone)]
pub enum Backend {
    Scripted(Arc<ScriptedPolicy>),
    Remote(Arc<RemotePolicy>),
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::Scripted(_) => f.write_str("Scripted"),
            Backend::Remote(r) => write!(f, "Remote({})", r.endpoint()),
        }
    }
}

/// A configured policy for one role. Cheap to clone and share across workers.
#[derive(Debug, Clone)]
pub struct PolicyHandle {
    pub role: PolicyRole,
    pub backend: Backend,
    pub seed: u64,
}

impl PolicyHandle {
    pub fn scripted(role: PolicyRole, policy: ScriptedPolicy) -> Self {
        PolicyHandle { role, backend: Backend::Scripted(Arc::new(policy)), seed: 0 }
    }

    pub fn remote(role: PolicyRole, policy: RemotePolicy) -> Self {
        PolicyHandle { role, backend: Backend::Remote(Arc::new(policy)), seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn backend_kind(&self) -> &'static str {
        match self.backend {
            Backend::Scripted(_) => "scripted",
            Backend::Remote(_) => "remote",
        }
    }

    /// Start a request tagged with this handle's role.
    pub fn request(&self, system_prompt: impl Into<String>, messages: Vec<Message>) -> PolicyRequest {
        PolicyRequest::new(self.role, system_prompt, messages)
    }

    /// One exchange with the backend.
    pub fn complete(&self, req: &PolicyRequest) -> Result<PolicyResponse, PolicyError> {
        req.validate()?;
        let started = Instant::now();
        let reply = match &self.backend {
            Backend::Scripted(s) => s.respond(req)?,
            Backend::Remote(r) => r.exchange(req)?,
        };
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        if reply.content.trim().is_empty() {
            return Err(PolicyError::Malformed("empty content".into()));
        }
        let usage = reply.usage.unwrap_or(Usage {
            prompt_token_estimate: words_to_tokens(req.prompt_text_words()),
            completion_token_estimate: token_estimate(&reply.content),
        });
        Ok(PolicyResponse { content: reply.content, usage, latency_ms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(content: &str) -> PolicyRequest {
        PolicyRequest::new(PolicyRole::Student, "Answer briefly.", vec![Message::human(content)])
    }

    #[test]
    fn scripted_student_answers_from_fixture() {
        let mut policy = ScriptedPolicy::new();
        policy.insert(PolicyRole::Student, req("q1").fingerprint(), "yes");
        let h = PolicyHandle::scripted(PolicyRole::Student, policy);
        let resp = h.complete(&req("q1")).unwrap();
        assert_eq!(resp.content, "yes");
        assert!(resp.latency_ms >= 0.0);
    }

    #[test]
    fn unknown_fingerprint_without_default_misses() {
        let h = PolicyHandle::scripted(PolicyRole::Student, ScriptedPolicy::new());
        assert!(matches!(h.complete(&req("q2")), Err(PolicyError::FixtureMiss { .. })));
    }

    #[test]
    fn default_reply_is_used() {
        let h = PolicyHandle::scripted(PolicyRole::Student, ScriptedPolicy::new().with_default("no"));
        assert_eq!(h.complete(&req("anything")).unwrap().content, "no");
    }

    #[test]
    fn first_message_must_be_human() {
        let mut r = req("x");
        r.messages[0].role = Role::Gpt;
        let h = PolicyHandle::scripted(PolicyRole::Student, ScriptedPolicy::new().with_default("no"));
        assert!(matches!(h.complete(&r), Err(PolicyError::InvalidRequest(_))));
        r.messages.clear();
        assert!(matches!(h.complete(&r), Err(PolicyError::InvalidRequest(_))));
    }

    #[test]
    fn token_proxy() {
        assert_eq!(token_estimate(""), 0);
        assert_eq!(token_estimate("one two three"), 4);
        assert_eq!(token_estimate("a b c d e f g h i j"), 13);
    }

    #[test]
    fn fingerprint_ignores_nothing_but_bytes() {
        let a = req("q1");
        let mut b = req("q1");
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.messages[0].images.push("img.png".into());
        assert_ne!(a.fingerprint(), b.fingerprint());
        let c = req("q1").with_seed(7);
        assert_ne!(a.fingerprint(), c.fingerprint());
        let d = req("q1").with_temperature(0.9);
        assert_eq!(a.fingerprint(), d.fingerprint());
    }

    proptest::proptest! {
        #[test]
        fn prompt_estimate_is_monotone(words in proptest::collection::vec("[a-z]{1,8}", 0..40), extra in "[a-z]{1,8}") {
            let base = words.join(" ");
            let longer = format!("{base} {extra}");
            let h = PolicyHandle::scripted(PolicyRole::Student, ScriptedPolicy::new().with_default("ok"));
            let a = h.complete(&req(&base)).unwrap().usage.prompt_token_estimate;
            let b = h.complete(&req(&longer)).unwrap().usage.prompt_token_estimate;
            proptest::prop_assert!(b >= a);
        }

        #[test]
        fn scripted_is_deterministic(q in "[a-z ]{1,30}") {
            let h = PolicyHandle::scripted(
                PolicyRole::Student,
                ScriptedPolicy::new().with_responder(|r: &PolicyRequest| Some(format!("echo {}", r.fingerprint()))),
            );
            let a = h.complete(&req(&q)).unwrap().content;
            let b = h.complete(&req(&q)).unwrap().content;
            proptest::prop_assert_eq!(a, b);
        }
    }
}
