//! Lints every bundled fixture and prints the verdict with its rules.
//!
//!     cargo run --example lint_fixtures

use std::fs;
use std::path::Path;

use forge::eval::{Matcher, MatcherKind};
use forge::trajectory::parse_lenient;
use forge::validate::{Lexicon, Linter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let linter = Linter::new(Matcher::new(MatcherKind::Soft), Lexicon::builtin());
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for group in ["direct", "tool_calling", "interleaved", "collaboration", "simulation", "negative"] {
        let mut files: Vec<_> = fs::read_dir(root.join(group))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        files.sort();
        for f in files.iter().filter(|f| f.extension().is_some_and(|x| x == "json")) {
            // Lenient parsing keeps structurally broken documents lintable.
            let t = parse_lenient(&fs::read_to_string(f)?)?;
            let report = linter.lint(&t, &linter.spec_for(t.environment_id), None);
            let rules: Vec<&str> = report.violations.iter().map(|v| v.rule_id.as_str()).collect();
            let name = format!("{group}/{}", f.file_stem().unwrap().to_string_lossy());
            println!("{name:<44} {:<8} {}", format!("{:?}", report.verdict), rules.join(","));
        }
    }
    Ok(())
}
