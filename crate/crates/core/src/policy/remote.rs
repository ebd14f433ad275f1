use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Decoding, Message, PolicyError, PolicyRequest, Reply, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_max_in_flight() -> usize {
    8
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    100
}
fn default_timeout_ms() -> u64 {
    120_000
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            max_in_flight: default_max_in_flight(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    role: &'a str,
    system: &'a str,
    messages: &'a [Message],
    decoding: &'a Decoding,
}

#[derive(Deserialize)]
struct WireResponse {
    content: String,
    #[serde(default)]
    usage: Option<WireUsage>,
    #[serde(default)]
    #[allow(dead_code)]
    latency_ms: Option<f64>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Counting gate bounding concurrent exchanges.
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.count.lock().expect("in-flight lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight lock");
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for the JSON wire protocol: one POST per turn.
pub struct RemotePolicy {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: InFlight,
}

enum Failure {
    Transport(String),
    Content(String),
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Result<Self, PolicyError> {
        if config.endpoint.trim().is_empty() {
            return Err(PolicyError::Config("remote backend requires an endpoint".into()));
        }
        if config.max_in_flight == 0 {
            return Err(PolicyError::Config("max_in_flight must be at least 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = InFlight { count: Mutex::new(0), freed: Condvar::new(), limit: config.max_in_flight };
        Ok(RemotePolicy { config, agent, gate })
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    pub(crate) fn exchange(&self, req: &PolicyRequest) -> Result<Reply, PolicyError> {
        let body = WireRequest {
            role: req.role.as_str(),
            system: &req.system_prompt,
            messages: &req.messages,
            decoding: &req.decoding,
        };
        let _slot = self.gate.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.once(&body) {
                Ok(reply) => return Ok(reply),
                Err(Failure::Content(msg)) => return Err(PolicyError::Malformed(msg)),
                Err(Failure::Transport(msg)) if attempts > self.config.max_retries => {
                    return Err(PolicyError::Transport { attempts, message: msg })
                }
                Err(Failure::Transport(msg)) => {
                    tracing::warn!(endpoint = %self.config.endpoint, attempts, error = %msg, "retrying policy exchange");
                    thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempts - 1)));
                }
            }
        }
    }

    fn once(&self, body: &WireRequest<'_>) -> Result<Reply, Failure> {
        let mut resp =
            self.agent.post(&self.config.endpoint).send_json(body).map_err(|e| Failure::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 500 {
            return Err(Failure::Transport(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Failure::Content(format!("HTTP {status}")));
        }
        let parsed: WireResponse = resp.body_mut().read_json().map_err(|e| Failure::Content(e.to_string()))?;
        Ok(Reply {
            content: parsed.content,
            usage: parsed.usage.map(|u| Usage {
                prompt_token_estimate: u.prompt_tokens,
                completion_token_estimate: u.completion_tokens,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyHandle, PolicyRole};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serve `replies` in order, one per connection, recording request bodies.
    fn stub(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/turn", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = bodies.clone();
        thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
                thread::sleep(Duration::from_millis(2));
            }
        });
        (url, bodies)
    }

    fn request() -> PolicyRequest {
        PolicyRequest::new(PolicyRole::Teacher, "Be brief.", vec![Message::human("Is there an effusion?")]).with_seed(3)
    }

    fn config(url: String) -> RemoteConfig {
        RemoteConfig { backoff_ms: 1, ..RemoteConfig::new(url) }
    }

    #[test]
    fn echo_stub_round_trip() {
        let (url, bodies) = stub(vec![(200, r#"{"content":"stub payload"}"#.into())]);
        let h = PolicyHandle::remote(PolicyRole::Teacher, RemotePolicy::new(config(url)).unwrap());
        let resp = h.complete(&request()).unwrap();
        assert_eq!(resp.content, "stub payload");
        assert!(resp.latency_ms > 0.0);
        let sent: serde_json::Value = serde_json::from_str(&bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["role"], "teacher");
        assert_eq!(sent["system"], "Be brief.");
        assert_eq!(sent["messages"][0]["role"], "human");
        assert_eq!(sent["decoding"]["seed"], 3);
    }

    #[test]
    fn reported_usage_wins_over_proxy() {
        let body = r#"{"content":"no","usage":{"prompt_tokens":11,"completion_tokens":1}}"#;
        let (url, _) = stub(vec![(200, body.into())]);
        let h = PolicyHandle::remote(PolicyRole::Teacher, RemotePolicy::new(config(url)).unwrap());
        let usage = h.complete(&request()).unwrap().usage;
        assert_eq!((usage.prompt_token_estimate, usage.completion_token_estimate), (11, 1));
    }

    #[test]
    fn server_errors_are_retried() {
        let (url, bodies) = stub(vec![(503, "{}".into()), (503, "{}".into()), (200, r#"{"content":"yes"}"#.into())]);
        let h = PolicyHandle::remote(PolicyRole::Teacher, RemotePolicy::new(config(url)).unwrap());
        assert_eq!(h.complete(&request()).unwrap().content, "yes");
        assert_eq!(bodies.lock().unwrap().len(), 3);
    }

    #[test]
    fn content_errors_are_not_retried() {
        let (url, bodies) =
            stub(vec![(200, r#"{"text":"wrong shape"}"#.into()), (200, r#"{"content":"late"}"#.into())]);
        let h = PolicyHandle::remote(PolicyRole::Teacher, RemotePolicy::new(config(url)).unwrap());
        assert!(matches!(h.complete(&request()), Err(PolicyError::Malformed(_))));
        assert_eq!(bodies.lock().unwrap().len(), 1);
    }

    #[test]
    fn dead_endpoint_reports_attempts() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let cfg = RemoteConfig { max_retries: 2, ..config(format!("http://127.0.0.1:{port}/")) };
        let h = PolicyHandle::remote(PolicyRole::Teacher, RemotePolicy::new(cfg).unwrap());
        match h.complete(&request()) {
            Err(PolicyError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Arc::new(InFlight { count: Mutex::new(0), freed: Condvar::new(), limit: 2 });
        let peak = Arc::new(AtomicUsize::new(0));
        let live = Arc::new(AtomicUsize::new(0));
        let workers: Vec<_> = (0..6)
            .map(|_| {
                let (gate, peak, live) = (gate.clone(), peak.clone(), live.clone());
                thread::spawn(move || {
                    let _slot = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for w in workers {
            w.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn endpoint_is_required() {
        assert!(matches!(RemotePolicy::new(RemoteConfig::new(" ")), Err(PolicyError::Config(_))));
    }
}
