use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use forge::synthetic::{SyntheticSpec, SyntheticWorld};

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .env("FORGE_LOG", "error")
        .env_remove("FORGE_CONFIG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// All `*.json` documents in `dirs` as one JSONL file.
fn jsonl(dirs: &[&str], out: &Path) {
    let mut lines = String::new();
    for d in dirs {
        let mut files: Vec<_> = fs::read_dir(fixtures().join(d)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        for f in files.iter().filter(|f| f.extension().is_some_and(|x| x == "json")) {
            lines.push_str(fs::read_to_string(f).unwrap().trim());
            lines.push('\n');
        }
    }
    fs::write(out, lines).unwrap();
}

#[test]
fn help_and_usage_codes() {
    assert_eq!(code(&forge(&["--help"])), 0);
    assert_eq!(code(&forge(&["generate", "--help"])), 0);
    assert_eq!(code(&forge(&["frobnicate"])), 2);
    assert_eq!(code(&forge(&[])), 2);
    assert_eq!(code(&forge(&["validate"])), 2);
}

#[test]
fn generate_without_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = forge(&["generate", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("FORGE_CONFIG"));
}

#[test]
fn bad_config_key_is_reported_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("forge.json");
    fs::write(&cfg, r#"{"tier3": {"retries": "many"}}"#).unwrap();
    let o = forge(&["generate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tier3.retries"));
}

#[test]
fn config_path_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let world = Arc::new(SyntheticWorld::new(SyntheticSpec { samples: 12, ..SyntheticSpec::default() }));
    let cfg = world.materialize(&dir.path().join("world")).unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["generate", "--out", out.to_str().unwrap()])
        .env("FORGE_LOG", "error")
        .env("FORGE_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["corpus.jsonl", "stats.json", "audit.jsonl", "discard.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["run"]["samples"], 12);

    let s = forge(&["stats", "--corpus", out.join("corpus.jsonl").to_str().unwrap()]);
    assert_eq!(code(&s), 0);
    let again: serde_json::Value = serde_json::from_slice(&s.stdout).unwrap();
    assert_eq!(again["records"], stats["records"]);
}

#[test]
fn strict_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.jsonl");
    let bad = dir.path().join("bad.jsonl");
    jsonl(&["tool_calling", "interleaved", "collaboration", "simulation", "direct"], &good);
    jsonl(&["negative"], &bad);
    assert_eq!(code(&forge(&["validate", "--in", good.to_str().unwrap(), "--strict"])), 0);
    let report = dir.path().join("report.json");
    let o = forge(&["validate", "--in", bad.to_str().unwrap(), "--strict", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["summary"]["rejected"], 12);
    assert_eq!(r["summary"]["flagged"], 1);
    // Without --strict rejects are only reported.
    assert_eq!(code(&forge(&["validate", "--in", bad.to_str().unwrap()])), 0);

    let mut garbage = fs::read_to_string(&good).unwrap();
    garbage.push_str("{not json\n");
    fs::write(&good, garbage).unwrap();
    assert_eq!(code(&forge(&["validate", "--in", good.to_str().unwrap(), "--strict"])), 1);
}

#[test]
fn decontaminate_strict_and_ngram_length() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let test = dir.path().join("test.jsonl");
    fs::write(&train, "{\"id\": \"t1\", \"text\": \"the film shows a small right sided pleural effusion today\"}\n")
        .unwrap();
    fs::write(
        &test,
        "{\"sample_id\": \"q1\", \"question\": \"does the image show a small right sided pleural effusion today?\"}\n",
    )
    .unwrap();
    let args = |extra: &[&str]| {
        let mut a = vec!["decontaminate", "--train", train.to_str().unwrap(), "--test", test.to_str().unwrap()];
        a.extend_from_slice(extra);
        a.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let run = |extra: &[&str]| {
        let a = args(extra);
        forge(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    // Seven shared tokens: clean at n = 8, contaminated at n = 7.
    assert_eq!(code(&run(&["--strict"])), 0);
    assert_eq!(code(&run(&["--strict", "-n", "7"])), 1);
    assert_eq!(code(&run(&["-n", "7"])), 0);
}

#[test]
fn evaluate_and_route_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let episodes = dir.path().join("episodes.jsonl");
    fs::write(
        &episodes,
        [
            r#"{"sample_id":"a","prediction":"PICC line","gold":"peripherally inserted central catheter","depth":1,"tokens":10,"latency_ms":50.0,"forced":false,"organ":"lung"}"#,
            r#"{"sample_id":"b","prediction":"no","gold":"yes","depth":0,"tokens":5,"latency_ms":5.0,"forced":false,"organ":"heart"}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let out = dir.path().join("eval.json");
    let o = forge(&[
        "evaluate",
        "--episodes",
        episodes.to_str().unwrap(),
        "--by-category",
        "organ",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["accuracy"], 50.0);

    let records = dir.path().join("routing.jsonl");
    let rec = |id: &str, d: bool, a: bool, learned: &str| {
        serde_json::json!({
            "sample_id": id, "correct_direct": d, "correct_agentic": a,
            "cost_direct": {"actions": 0.0, "tokens": 100.0, "latency_ms": 10.0},
            "cost_agentic": {"actions": 3.0, "tokens": 900.0, "latency_ms": 800.0},
            "learned_choice": learned,
        })
        .to_string()
    };
    fs::write(&records, [rec("1", true, false, "direct"), rec("2", false, true, "direct")].join("\n")).unwrap();
    let out = dir.path().join("route.json");
    let o = forge(&["route-analyze", "--records", records.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["oracle"]["accuracy"], 1.0);
    assert_eq!(r["learned"]["accuracy"], 0.5);

    fs::write(&records, r#"{"sample_id":"x","correct_direct":true}"#).unwrap();
    assert_eq!(code(&forge(&["route-analyze", "--records", records.to_str().unwrap()])), 2);
}
