//! Talks to a policy server over the JSON wire protocol. Without an
//! argument a one-shot local stub answers, so the example runs offline.
//!
//!     cargo run --example remote_policy -- http://localhost:8000/v1/turn

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use forge::policy::{Message, PolicyHandle, PolicyRequest, PolicyRole, RemoteConfig, RemotePolicy};

fn stub() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let url = format!("http://{}/v1/turn", listener.local_addr().unwrap());
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line.trim().is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        eprintln!("stub received: {}", String::from_utf8_lossy(&body));
        let reply = r#"{"content":"<think>Blunted costophrenic angle.</think>\n[FINAL] yes","usage":{"prompt_tokens":42,"completion_tokens":9}}"#;
        let mut stream = stream;
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}", reply.len()).unwrap();
    });
    url
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let url = std::env::args().nth(1).unwrap_or_else(stub);
    let policy = PolicyHandle::remote(PolicyRole::Teacher, RemotePolicy::new(RemoteConfig::new(url))?);
    let req = PolicyRequest::new(
        PolicyRole::Teacher,
        "Answer yes or no.",
        vec![Message::human("Is there a pleural effusion?")],
    )
    .with_seed(7);
    let resp = policy.complete(&req)?;
    println!("reply: {}", resp.content);
    println!(
        "tokens {} in / {} out, {:.1} ms",
        resp.usage.prompt_token_estimate, resp.usage.completion_token_estimate, resp.latency_ms
    );
    Ok(())
}
