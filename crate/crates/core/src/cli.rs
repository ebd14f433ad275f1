//! The `forge` command line.
//!
//! Exit codes: 0 success, 1 rejects or overlaps under `--strict`, 2 usage,
//! configuration or input errors. Logs go to stderr as JSON lines; data goes
//! to files (or stdout where a subcommand says so).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{load_config, BackendKind, ConfigError, ForgeConfig, PolicyConfig};
use crate::env::{Environment, EnvironmentSpec, EpisodeOptions, Sample, ToolBox, ToolFixtures, VignetteStore};
use crate::eval::{
    decontaminate, evaluate_run, routing_report, EpisodeRecord, Matcher, MatcherKind, RoutingRecord, SynonymTable,
};
use crate::pipeline::{
    assemble, read_corpus, stats, write_corpus, AgenticTier, BalanceConfig, MatcherMap, Pipeline, RunSummary, TierSet,
};
use crate::policy::{PolicyHandle, PolicyRole, RemotePolicy, ScriptedPolicy};
use crate::trajectory::parse_lenient;
use crate::validate::{audit_sample, Lexicon, LintReport, Linter, Verdict};

pub const CONFIG_ENV: &str = "FORGE_CONFIG";
/// Share of the assembled corpus exported for review.
pub const AUDIT_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn input(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

#[derive(Parser, Debug)]
#[command(name = "forge", version, about = "Build, audit and analyze agentic training corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the tiered generation pipeline and write a corpus with stats.
    Generate(GenerateArgs),
    /// Lint a corpus with the structural and behavioral filters.
    Validate(ValidateArgs),
    /// Corpus statistics by dataset, tier and environment.
    Stats(StatsArgs),
    /// Accuracy report over episode records.
    Evaluate(EvaluateArgs),
    /// Compare fixed, oracle and learned routing.
    RouteAnalyze(RouteArgs),
    /// Report n-gram overlap between training texts and test questions.
    Decontaminate(DecontamArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Samples JSONL; defaults to the datasets listed in the config.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated tiers to run.
    #[arg(long, default_value = "1,2,3")]
    tiers: TierSet,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Config supplying matchers and bounds.
    #[arg(long = "env-config")]
    env_config: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Exit 1 when any trajectory is rejected.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long, default_value = "soft")]
    matcher: MatcherKind,
    #[arg(long)]
    synonyms: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Episode field to break accuracy down by.
    #[arg(long = "by-category")]
    by_category: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON report file; the table is printed to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RouteArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecontamArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(short = 'n', long = "ngram", default_value_t = 8)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit 1 when any overlap is found.
    #[arg(long)]
    strict: bool,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Validate(a) => validate(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::RouteAnalyze(a) => route_analyze(a),
        Command::Decontaminate(a) => decontaminate_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            tracing::error!(error = %e, "forge failed");
            eprintln!("error: {e}");
            2
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("FORGE_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().json().with_env_filter(filter).with_writer(io::stderr).try_init();
}

/// `--config`, then `$FORGE_CONFIG`.
fn config_path(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

fn optional_config(flag: Option<PathBuf>) -> Result<ForgeConfig, CliError> {
    match config_path(flag) {
        Some(p) => Ok(load_config(&p)?),
        None => Ok(ForgeConfig::default()),
    }
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::input(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::input(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::input(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::input(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Policy handles for the four pipeline roles.
#[derive(Clone)]
pub struct Handles {
    pub student: PolicyHandle,
    pub teacher: PolicyHandle,
    pub agent: PolicyHandle,
    pub recap: PolicyHandle,
}

fn policy_handle(
    cfg: &ForgeConfig,
    name: &str,
    role: PolicyRole,
    pc: Option<&PolicyConfig>,
) -> Result<PolicyHandle, CliError> {
    let Some(pc) = pc else {
        // Unconfigured roles answer nothing; every call is a fixture miss.
        return Ok(PolicyHandle::scripted(role, ScriptedPolicy::new()));
    };
    let handle = match pc.backend {
        BackendKind::Scripted => {
            let mut policy = match &pc.fixture_path {
                Some(p) => ScriptedPolicy::load(&cfg.resolve(p))
                    .map_err(|e| ConfigError::new(format!("policies.{name}.fixture_path"), e.to_string()))?,
                None => ScriptedPolicy::new(),
            };
            if let Some(d) = &pc.default_reply {
                policy = policy.with_default(d.clone());
            }
            PolicyHandle::scripted(role, policy)
        }
        BackendKind::Remote => {
            let rc =
                pc.remote_config().ok_or_else(|| ConfigError::new(format!("policies.{name}.endpoint"), "missing"))?;
            let remote =
                RemotePolicy::new(rc).map_err(|e| ConfigError::new(format!("policies.{name}"), e.to_string()))?;
            PolicyHandle::remote(role, remote)
        }
    };
    Ok(handle.with_seed(pc.seed))
}

impl Handles {
    pub fn from_config(cfg: &ForgeConfig) -> Result<Self, CliError> {
        let p = &cfg.policies;
        Ok(Handles {
            student: policy_handle(cfg, "student", PolicyRole::Student, p.student.as_ref())?,
            teacher: policy_handle(cfg, "teacher", PolicyRole::Teacher, p.teacher.as_ref())?,
            agent: policy_handle(cfg, "agent", PolicyRole::Agent, p.agent.as_ref())?,
            recap: policy_handle(cfg, "recap", PolicyRole::Recap, p.recap.as_ref())?,
        })
    }
}

fn synonyms(cfg: &ForgeConfig, flag: Option<&Path>) -> Result<Arc<SynonymTable>, CliError> {
    let path = flag.map(Path::to_path_buf).or_else(|| cfg.eval.synonyms_path.as_ref().map(|p| cfg.resolve(p)));
    match path {
        Some(p) => SynonymTable::load(&p).map(Arc::new).map_err(|e| CliError::input(&p, e)),
        None => Ok(Arc::new(SynonymTable::builtin())),
    }
}

/// Matcher per configured dataset; soft for anything else.
pub fn matcher_map(cfg: &ForgeConfig) -> Result<MatcherMap, CliError> {
    let syn = synonyms(cfg, None)?;
    let make = |kind| Matcher::new(kind).with_synonyms(syn.clone()).with_threshold(cfg.eval.soft_match_threshold);
    let mut map = MatcherMap { default: make(MatcherKind::Soft), by_dataset: BTreeMap::new() };
    for d in &cfg.datasets {
        map = map.with(&d.id, make(d.matcher));
    }
    Ok(map)
}

fn linter(cfg: &ForgeConfig, lexicon_flag: Option<&Path>, matchers: &MatcherMap) -> Result<Linter, CliError> {
    let path =
        lexicon_flag.map(Path::to_path_buf).or_else(|| cfg.validator.lexicon_path.as_ref().map(|p| cfg.resolve(p)));
    let lexicon = match path {
        Some(p) => Lexicon::load(&p).map_err(|e| CliError::input(&p, e))?,
        None => Lexicon::builtin(),
    };
    let mut l = Linter::new(matchers.default.clone(), lexicon);
    l.length_bound = cfg.validator.length_bound;
    l.depth_bounds = cfg.validator.depth_bounds.clone();
    Ok(l)
}

/// Wires a pipeline from config. Environments use the validator's depth
/// bounds as their interaction caps.
pub fn build_pipeline(cfg: &ForgeConfig, handles: Handles, fixtures: Arc<ToolFixtures>) -> Result<Pipeline, CliError> {
    let matchers = matcher_map(cfg)?;
    let linter = linter(cfg, None, &matchers)?;
    let vignettes = match &cfg.tools.vignette_dir {
        Some(d) => {
            let d = cfg.resolve(d);
            Arc::new(VignetteStore::load(&d).map_err(|e| CliError::input(&d, e))?)
        }
        None => Arc::new(VignetteStore::default()),
    };
    let options = EpisodeOptions {
        image_root: cfg.tools.image_root.as_ref().map(|p| cfg.resolve(p)),
        artifact_dir: cfg.tools.artifact_dir.as_ref().map(|p| cfg.resolve(p)),
    };
    let mut agentic = AgenticTier::new(handles.agent, handles.recap, linter.clone());
    agentic.matchers = matchers;
    agentic.retries = cfg.tier3.retries;
    agentic.schedule = cfg.tier3.temperature_schedule.clone();
    agentic.recap_filter = cfg.tier3.recap_filter;
    for (dataset, env_id) in &cfg.env_map {
        let spec: EnvironmentSpec = linter.spec_for(*env_id);
        let tools = ToolBox::for_spec(&spec, fixtures.clone(), cfg.tools.endpoint.as_deref());
        let env = Environment::new(spec, tools).with_vignettes(vignettes.clone()).with_options(options.clone());
        agentic = agentic.with_environment(dataset, env);
    }
    Ok(Pipeline { student: handles.student, teacher: handles.teacher, agentic, tiers: TierSet::default() })
}

fn load_samples(cfg: &ForgeConfig, flag: Option<&Path>) -> Result<Vec<Sample>, CliError> {
    let paths: Vec<PathBuf> = match flag {
        Some(p) => vec![p.to_path_buf()],
        None => cfg.datasets.iter().map(|d| cfg.resolve(&d.path)).collect(),
    };
    if paths.is_empty() {
        return Err(ConfigError::new("datasets", "no dataset given; pass --dataset or list datasets").into());
    }
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_jsonl::<Sample>(&p)?);
    }
    for s in &out {
        if !cfg.env_map.contains_key(&s.dataset_id) {
            return Err(ConfigError::new(format!("env_map.{}", s.dataset_id), "dataset has no environment").into());
        }
    }
    Ok(out)
}

fn generate(a: GenerateArgs) -> Result<i32, CliError> {
    let path = config_path(a.config)
        .ok_or_else(|| ConfigError::new("(file)", format!("pass --config or set {CONFIG_ENV}")))?;
    let mut cfg = load_config(&path)?;
    if let Some(r) = a.retries {
        cfg.tier3.retries = r;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(s) = a.seed {
        cfg.global_seed = s;
    }
    cfg.check()?;
    let samples = load_samples(&cfg, a.dataset.as_deref())?;
    let fixtures = match &cfg.tools.fixture_path {
        Some(p) => {
            let p = cfg.resolve(p);
            Arc::new(ToolFixtures::load(&p).map_err(|e| CliError::input(&p, e))?)
        }
        None => Arc::new(ToolFixtures::default()),
    };
    let mut pipeline = build_pipeline(&cfg, Handles::from_config(&cfg)?, fixtures)?;
    pipeline.tiers = a.tiers;

    info!(samples = samples.len(), workers = cfg.workers, "generation started");
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(|e| CliError::Run(e.to_string()))?;
    let partition = pool.install(|| pipeline.run(&samples)).map_err(|e| CliError::Run(e.to_string()))?;
    let balance = cfg.validator.majority_rate.map(|r| BalanceConfig { majority_rate: r, seed: cfg.global_seed });
    let corpus = assemble(&partition, balance).map_err(|e| CliError::Run(e.to_string()))?;

    fs::create_dir_all(&a.out).map_err(|e| CliError::input(&a.out, e))?;
    let corpus_path = a.out.join("corpus.jsonl");
    write_corpus(&corpus_path, &corpus.records).map_err(|e| CliError::Run(e.to_string()))?;
    write_corpus(&a.out.join("audit.jsonl"), &audit_sample(&corpus.records, AUDIT_FRACTION, cfg.global_seed))
        .map_err(|e| CliError::Run(e.to_string()))?;
    let discards: String =
        partition.discard.iter().map(|d| serde_json::to_string(d).expect("discard serializes") + "\n").collect();
    fs::write(a.out.join("discard.jsonl"), discards).map_err(|e| CliError::input(&a.out, e))?;
    let mut report = stats(&corpus.records);
    report.run = Some(RunSummary::from_partition(&partition, corpus.balanced_out.len()));
    write_json(Some(&a.out.join("stats.json")), &report)?;
    info!(records = corpus.records.len(), discarded = partition.discard.len(), "generation finished");
    Ok(0)
}

#[derive(Serialize)]
struct ValidationSummary {
    trajectories: usize,
    passed: usize,
    rejected: usize,
    flagged: usize,
    unparseable: usize,
    rule_counts: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct ValidationReport {
    summary: ValidationSummary,
    unparseable: Vec<Value>,
    reports: Vec<LintReport>,
}

fn validate(a: ValidateArgs) -> Result<i32, CliError> {
    let cfg = optional_config(a.env_config)?;
    let matchers = matcher_map(&cfg)?;
    let linter = linter(&cfg, a.lexicon.as_deref(), &matchers)?;
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::input(&a.input, e))?;
    let mut trajectories = Vec::new();
    let mut unparseable = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_lenient(line) {
            Ok(t) => trajectories.push(t),
            Err(e) => unparseable.push(serde_json::json!({"line": i + 1, "error": e.to_string()})),
        }
    }
    let mut reports: Vec<LintReport> = {
        use rayon::prelude::*;
        trajectories
            .par_iter()
            .map(|t| {
                let matcher = t.dataset_id.as_deref().map_or(&matchers.default, |d| matchers.get(d));
                linter.lint_with(t, &linter.spec_for(t.environment_id), matcher, None)
            })
            .collect()
    };
    reports.sort_by(|x, y| x.trajectory_id.cmp(&y.trajectory_id));
    let mut rule_counts = BTreeMap::new();
    for v in reports.iter().flat_map(|r| &r.violations) {
        *rule_counts.entry(v.rule_id.to_string()).or_default() += 1;
    }
    let count = |v: Verdict| reports.iter().filter(|r| r.verdict == v).count();
    let summary = ValidationSummary {
        trajectories: reports.len(),
        passed: count(Verdict::Pass),
        rejected: count(Verdict::Reject),
        flagged: count(Verdict::Flagged),
        unparseable: unparseable.len(),
        rule_counts,
    };
    info!(
        trajectories = summary.trajectories,
        rejected = summary.rejected,
        flagged = summary.flagged,
        "validation done"
    );
    let failed = summary.rejected + summary.unparseable > 0;
    write_json(a.report.as_deref(), &ValidationReport { summary, unparseable, reports })?;
    Ok(if a.strict && failed { 1 } else { 0 })
}

fn stats_cmd(a: StatsArgs) -> Result<i32, CliError> {
    let corpus = read_corpus(&a.corpus, false).map_err(|e| CliError::Input(e.to_string()))?;
    write_json(a.out.as_deref(), &stats(&corpus))?;
    Ok(0)
}

fn evaluate(a: EvaluateArgs) -> Result<i32, CliError> {
    let cfg = optional_config(a.config)?;
    let syn = synonyms(&cfg, a.synonyms.as_deref())?;
    let matcher =
        Matcher::new(a.matcher).with_synonyms(syn).with_threshold(a.threshold.unwrap_or(cfg.eval.soft_match_threshold));
    let mut episodes: Vec<EpisodeRecord> = read_jsonl(&a.episodes)?;
    episodes.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    let report = evaluate_run(&episodes, &matcher, a.by_category.as_deref());
    print!("{}", report.table());
    if let Some(out) = &a.out {
        write_json(Some(out), &report)?;
    }
    Ok(0)
}

fn route_analyze(a: RouteArgs) -> Result<i32, CliError> {
    let records: Vec<RoutingRecord> = read_jsonl(&a.records)?;
    let report = routing_report(&records).map_err(|e| CliError::Input(e.to_string()))?;
    write_json(a.out.as_deref(), &report)?;
    Ok(0)
}

/// `(id, text)` from a corpus document, a sample, or an `{id, text}` object.
fn text_record(v: &Value, line: usize) -> Option<(String, String)> {
    let s = |x: &Value| x.as_str().map(str::to_string);
    if let Some(turns) = v.get("conversations").and_then(Value::as_array) {
        let id = v.pointer("/metadata/sample_id").and_then(s).unwrap_or_else(|| format!("line-{line}"));
        let text = turns.iter().filter_map(|t| t.get("value").and_then(Value::as_str)).collect::<Vec<_>>().join("\n");
        return Some((id, text));
    }
    if let Some(q) = v.get("question").and_then(s) {
        return Some((v.get("sample_id").and_then(s).unwrap_or_else(|| format!("line-{line}")), q));
    }
    let text = v.get("text").and_then(s)?;
    Some((v.get("id").and_then(s).unwrap_or_else(|| format!("line-{line}")), text))
}

fn read_texts(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let values: Vec<Value> = read_jsonl(path)?;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            text_record(v, i + 1).ok_or_else(|| {
                CliError::input(path, format!("line {}: no conversations, question or text field", i + 1))
            })
        })
        .collect()
}

fn decontaminate_cmd(a: DecontamArgs) -> Result<i32, CliError> {
    if a.n == 0 {
        return Err(CliError::Input("-n must be at least 1".to_string()));
    }
    let train = read_texts(&a.train)?;
    let test = read_texts(&a.test)?;
    let report = decontaminate(&train, &test, a.n);
    if !report.is_clean() {
        warn!(overlaps = report.overlaps.len(), "train/test overlap found");
    }
    write_json(a.out.as_deref(), &report)?;
    Ok(if a.strict && !report.is_clean() { 1 } else { 0 })
}
