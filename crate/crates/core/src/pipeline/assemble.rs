use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetRecord, PipelineError, TierPartition};
use crate::env::Sample;
use crate::eval::normalize;
use crate::trajectory::{deserialize, parse_lenient, serialize, Trajectory};
use crate::validate::class_balance;

/// Majority-label downsampling applied at assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceConfig {
    #[serde(default = "default_rate")]
    pub majority_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rate() -> f64 {
    1.0 / 3.0
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig { majority_rate: default_rate(), seed: 0 }
    }
}

/// Closed-form yes/no answers share a label; any other answer is its own
/// class so open questions never form a majority.
pub fn balance_label(sample: &Sample) -> String {
    match normalize(&sample.gold_answer).as_str() {
        l @ ("yes" | "no") => l.to_string(),
        _ => format!("#{}", sample.sample_id),
    }
}

/// Training corpus in output order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<Trajectory>,
    /// Samples removed by class balancing.
    pub balanced_out: Vec<String>,
}

enum Unit<'a> {
    Single(&'a DatasetRecord),
    Pair(&'a DatasetRecord, &'a DatasetRecord),
}

impl Unit<'_> {
    fn sample(&self) -> &Sample {
        match self {
            Unit::Single(r) | Unit::Pair(r, _) => &r.sample,
        }
    }
}

/// Direct, then enhanced, then prospective/retrospective pairs, each in
/// sample order. Pairs with a filtered recap are left out entirely.
pub fn assemble(partition: &TierPartition, balance: Option<BalanceConfig>) -> Result<Corpus, PipelineError> {
    partition.check(None)?;
    let mut units: Vec<Unit> = Vec::new();
    units.extend(partition.direct.iter().map(Unit::Single));
    units.extend(partition.enhanced.iter().map(Unit::Single));
    units.extend(
        partition.agentic.iter().filter_map(|p| p.retrospective.as_ref().map(|r| Unit::Pair(&p.prospective, r))),
    );
    let all: Vec<String> = units.iter().map(|u| u.sample().sample_id.clone()).collect();
    let kept = match balance {
        Some(b) => class_balance(units, |u| balance_label(u.sample()), b.majority_rate, b.seed),
        None => units,
    };
    let kept_ids: std::collections::BTreeSet<&str> = kept.iter().map(|u| u.sample().sample_id.as_str()).collect();
    let balanced_out = all.iter().filter(|id| !kept_ids.contains(id.as_str())).cloned().collect();

    let mut records = Vec::new();
    for unit in kept {
        match unit {
            Unit::Single(r) => records.push(r.trajectory.clone()),
            Unit::Pair(p, r) => {
                records.push(p.trajectory.clone());
                records.push(r.trajectory.clone());
            }
        }
    }
    Ok(Corpus { records, balanced_out })
}

/// One canonical document per line.
pub fn write_corpus(path: &Path, records: &[Trajectory]) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for (i, t) in records.iter().enumerate() {
        let line = serialize(t).map_err(|e| PipelineError::Corpus { line: i + 1, message: e.to_string() })?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a JSONL corpus. `strict` enforces every trajectory invariant;
/// otherwise only the document shape is required, for linting.
pub fn read_corpus(path: &Path, strict: bool) -> Result<Vec<Trajectory>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = if strict { deserialize(line) } else { parse_lenient(line) };
        out.push(parsed.map_err(|e| PipelineError::Corpus { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}
