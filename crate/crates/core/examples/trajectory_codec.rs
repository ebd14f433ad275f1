//! Parses a corpus document, walks its turns and writes it back.
//!
//!     cargo run --example trajectory_codec -- fixtures/tool_calling/depth2_laterality.json

use forge::trajectory::{deserialize, serialize, Role};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tool_calling/depth2_laterality.json").into());
    let doc = std::fs::read_to_string(&path)?;
    let t = deserialize(doc.trim())?;
    println!(
        "{} [{} / {}] depth {}, {} images",
        t.sample_id,
        t.environment_id,
        t.mode.as_str(),
        t.depth(),
        t.images.len()
    );
    for (i, turn) in t.turns.iter().enumerate() {
        let line = turn.content.lines().next().unwrap_or("");
        println!("{i:>2} {:<13} {line}", turn.role.as_str());
        if turn.role == Role::FunctionCall {
            let a = turn.action()?;
            println!("   -> {}({})", a.name, serde_json::Value::Object(a.arguments));
        }
    }
    println!("final answer: {}", t.final_answer);

    // Canonical form is stable: writing the parsed value reproduces the input.
    assert_eq!(serialize(&t)?, doc.trim());
    Ok(())
}
