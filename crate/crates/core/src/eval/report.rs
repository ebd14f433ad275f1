use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::matchers::Matcher;
use crate::env::{run_episode, Attempt, EnvError, Environment, EpisodeResult, Sample};
use crate::policy::PolicyHandle;

/// Upper edges (exclusive) of the latency buckets, in milliseconds.
pub const LATENCY_EDGES_MS: &[f64] = &[100.0, 1_000.0, 10_000.0, 60_000.0];

/// One evaluated episode as read from or written to a runs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub sample_id: String,
    #[serde(default)]
    pub prediction: Option<String>,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default)]
    pub depth: usize,
    #[serde(default)]
    pub tokens: u64,
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default)]
    pub forced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default = "unknown_backend")]
    pub backend: String,
    /// Any other fields, kept so `--by-category` can name them.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn unknown_backend() -> String {
    "unknown".to_string()
}

impl EpisodeRecord {
    pub fn from_result(result: &EpisodeResult, backend: &str) -> Self {
        let sample = &result.state.sample;
        EpisodeRecord {
            sample_id: sample.sample_id.clone(),
            prediction: result.final_answer().map(str::to_string),
            gold: sample.gold_answer.clone(),
            category: sample.category.clone(),
            depth: result.depth(),
            tokens: result.usage.total(),
            latency_ms: result.latency_ms,
            forced: result.forced(),
            failure: result.failure().map(str::to_string),
            backend: backend.to_string(),
            extra: Map::new(),
        }
    }

    pub fn category_value(&self, field: &str) -> String {
        if field == "category" {
            if let Some(c) = &self.category {
                return c.clone();
            }
        }
        match self.extra.get(field) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => "(none)".to_string(),
            Some(other) => other.to_string(),
        }
    }

    pub fn is_correct(&self, matcher: &Matcher) -> bool {
        self.prediction.as_deref().is_some_and(|p| matcher.matches(p, &self.gold))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryStats {
    pub episodes: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBucket {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub correct: usize,
    /// Percent, 0 to 100.
    pub accuracy: f64,
    pub forced: usize,
    pub failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category_field: Option<String>,
    pub per_category: BTreeMap<String, CategoryStats>,
    pub depth_histogram: BTreeMap<usize, usize>,
    pub mean_depth: f64,
    pub mean_tokens: f64,
    pub mean_latency_ms: f64,
    pub latency_histogram: Vec<LatencyBucket>,
    /// Backend kinds seen; scripted latencies are not comparable to API runs.
    pub backends: BTreeSet<String>,
}

fn pct(correct: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        correct as f64 * 100.0 / n as f64
    }
}

fn bucket_labels() -> Vec<String> {
    let fmt = |ms: f64| if ms >= 1000.0 { format!("{}s", ms / 1000.0) } else { format!("{ms}ms") };
    let mut labels = Vec::new();
    let mut lo = 0.0;
    for &hi in LATENCY_EDGES_MS {
        labels.push(format!("[{}, {})", fmt(lo), fmt(hi)));
        lo = hi;
    }
    labels.push(format!("[{}, inf)", fmt(lo)));
    labels
}

fn bucket_of(ms: f64) -> usize {
    LATENCY_EDGES_MS.iter().position(|&hi| ms < hi).unwrap_or(LATENCY_EDGES_MS.len())
}

/// Accuracy with optional per-category breakdown plus depth and latency
/// summaries. Matching runs in parallel; aggregation is order-independent.
pub fn evaluate_run(episodes: &[EpisodeRecord], matcher: &Matcher, category_field: Option<&str>) -> EvalReport {
    let verdicts: Vec<bool> = episodes.par_iter().map(|e| e.is_correct(matcher)).collect();
    let n = episodes.len();
    let mut report =
        EvalReport { episodes: n, category_field: category_field.map(str::to_string), ..EvalReport::default() };
    let mut buckets = vec![0usize; LATENCY_EDGES_MS.len() + 1];
    let (mut depth_sum, mut token_sum, mut latency_sum) = (0usize, 0u64, 0.0f64);
    for (e, &ok) in episodes.iter().zip(&verdicts) {
        report.correct += usize::from(ok);
        report.forced += usize::from(e.forced);
        report.failed += usize::from(e.failure.is_some());
        *report.depth_histogram.entry(e.depth).or_default() += 1;
        buckets[bucket_of(e.latency_ms)] += 1;
        depth_sum += e.depth;
        token_sum += e.tokens;
        latency_sum += e.latency_ms;
        report.backends.insert(e.backend.clone());
        if let Some(field) = category_field {
            let c = report.per_category.entry(e.category_value(field)).or_default();
            c.episodes += 1;
            c.correct += usize::from(ok);
        }
    }
    for c in report.per_category.values_mut() {
        c.accuracy = pct(c.correct, c.episodes);
    }
    report.accuracy = pct(report.correct, n);
    if n > 0 {
        report.mean_depth = depth_sum as f64 / n as f64;
        report.mean_tokens = token_sum as f64 / n as f64;
        report.mean_latency_ms = latency_sum / n as f64;
    }
    report.latency_histogram =
        bucket_labels().into_iter().zip(buckets).map(|(label, count)| LatencyBucket { label, count }).collect();
    report
}

impl EvalReport {
    /// Plain-text table for terminals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>8} {:>8} {:>9}", "category", "n", "correct", "acc %");
        for (name, c) in &self.per_category {
            let _ = writeln!(out, "{:<28} {:>8} {:>8} {:>9.1}", name, c.episodes, c.correct, c.accuracy);
        }
        let _ = writeln!(out, "{:<28} {:>8} {:>8} {:>9.1}", "overall", self.episodes, self.correct, self.accuracy);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "mean depth {:.2}  mean tokens {:.1}  mean latency {:.1} ms",
            self.mean_depth, self.mean_tokens, self.mean_latency_ms
        );
        let _ = writeln!(
            out,
            "forced {}  failed {}  backends {}",
            self.forced,
            self.failed,
            self.backends.iter().cloned().collect::<Vec<_>>().join(",")
        );
        let depths: Vec<String> = self.depth_histogram.iter().map(|(d, c)| format!("{d}:{c}")).collect();
        let _ = writeln!(out, "depth histogram {}", depths.join(" "));
        for b in &self.latency_histogram {
            let _ = writeln!(out, "latency {:<16} {}", b.label, b.count);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRunReport {
    /// `None` means the environment's own cap.
    pub cap: Option<usize>,
    pub episodes: Vec<EpisodeRecord>,
    pub accuracy: f64,
    pub mean_depth: f64,
    pub mean_tokens: f64,
    pub forced: usize,
}

/// Runs every sample with the interaction cap lowered to `cap`. Results
/// are sorted by sample id whatever the worker order.
pub fn depth_constrained_run(
    policy: &PolicyHandle,
    env: &Environment,
    samples: &[Sample],
    cap: Option<usize>,
    matcher: &Matcher,
) -> Result<DepthRunReport, EnvError> {
    let env = match cap {
        Some(c) if c > env.spec.t_max => {
            return Err(EnvError::Config(format!("cap {c} exceeds the environment limit {}", env.spec.t_max)))
        }
        Some(c) => env.clone().with_t_max(c),
        None => env.clone(),
    };
    let backend = policy.backend_kind();
    let mut episodes = samples
        .par_iter()
        .map(|s| {
            let attempt = Attempt::new(&s.sample_id, 1, &[0.2]);
            run_episode(&env, s, policy, attempt).map(|r| EpisodeRecord::from_result(&r, backend))
        })
        .collect::<Result<Vec<_>, _>>()?;
    episodes.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let summary = evaluate_run(&episodes, matcher, None);
    Ok(DepthRunReport {
        cap,
        accuracy: summary.accuracy,
        mean_depth: summary.mean_depth,
        mean_tokens: summary.mean_tokens,
        forced: summary.forced,
        episodes,
    })
}
