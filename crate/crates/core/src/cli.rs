//! Command-line entry point. Every subcommand reads one TOML run config,
//! applies flag overrides, validates the whole config and only then touches
//! files or the network.
//!
//! Exit codes: 0 on success, 1 on operational failure, 2 on usage or config
//! errors. Logs go to stderr as JSON lines; tables go to stdout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, OnceLock};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrastive::{train_adapter, AdapterParams, LossConfig, TrainConfig, TrainReport, TripleBatch};
use crate::distill::{
    build_provider, distill_batch, read_anchors, read_variants, write_variants, AnchorFailure, ChatProvider,
    FailureStage, ProviderConfig, ProviderError,
};
use crate::embed::{BackendSpec, CacheFirst, EmbedError, Embedder, VectorCache};
use crate::eval::{
    eval_embeddings, judge_right_rank, judge_spearman, load_benchmark, render_report_table, Benchmark,
    BenchmarkData, JudgeSample, MetricReport,
};
use crate::filter::{
    build_triples, filter_variants, read_triple_texts, read_triples, triples_to_pairs, write_triples, Dropped,
    FilterConfig,
};
use crate::http::SystemClock;
use crate::jsonl::write_jsonl;
use crate::taxonomy::{CueInventory, VariantKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0:#}")]
    Operational(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Operational(_) => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "negkit", version, about = "Negation and hedging data distillation, adapter training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate four negations and two hedges for every anchor.
    Distill(DistillArgs),
    /// Filter variants by edit distance and build (anchor, hedge, negation) triples.
    Build(CommonArgs),
    /// Embed triples and train a linear adapter.
    Train(CommonArgs),
    /// Score benchmarks with embeddings (optionally adapted) or an LLM judge.
    Eval(EvalArgs),
    /// Precompute a vector cache for every triple text.
    EmbedCache(EmbedCacheArgs),
    /// Turn triples into yes/no opposite-meaning prompts.
    ExportPairs(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the subcommand's primary output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides worker_count.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Replacement single-word hedge cue list (one cue per line).
    #[arg(long, requires = "multi_word_cues")]
    pub single_word_cues: Option<PathBuf>,
    /// Replacement multi-word hedge cue list (one cue per line).
    #[arg(long, requires = "single_word_cues")]
    pub multi_word_cues: Option<PathBuf>,
    /// Overrides max_failure_rate.
    #[arg(long)]
    pub max_failure_rate: Option<f64>,
}

fn parse_benchmark(s: &str) -> Result<Benchmark, String> {
    s.parse().map_err(|e: crate::eval::EvalError| e.to_string())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Benchmarks to run (repeatable or comma separated); defaults to all configured.
    #[arg(long = "benchmark", value_delimiter = ',', value_parser = parse_benchmark)]
    pub benchmarks: Vec<Benchmark>,
    /// Apply the adapter at paths.adapter.
    #[arg(long)]
    pub with_adapter: bool,
    /// Apply the adapter at this path.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Score with and without the adapter and print the deltas.
    #[arg(long)]
    pub compare: bool,
    /// Score with the chat model instead of embeddings.
    #[arg(long, conflicts_with_all = ["with_adapter", "adapter", "compare"])]
    pub judge: bool,
}

#[derive(Debug, Args)]
pub struct EmbedCacheArgs {
    /// `--out` sets the vectors file; the index is written next to it.
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also cache every text of the configured benchmarks.
    #[arg(long)]
    pub include_benchmarks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            epochs: d.epochs,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub anchors: Option<PathBuf>,
    pub variants: Option<PathBuf>,
    /// Defaults to `<variants>.failures.json`.
    pub failures: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    pub dropped: Option<PathBuf>,
    pub cache_index: Option<PathBuf>,
    pub cache_vectors: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub single_word_cues: Option<PathBuf>,
    pub multi_word_cues: Option<PathBuf>,
}

impl PathsConfig {
    fn entries_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 12] {
        [
            ("anchors", &mut self.anchors),
            ("variants", &mut self.variants),
            ("failures", &mut self.failures),
            ("triples", &mut self.triples),
            ("dropped", &mut self.dropped),
            ("cache_index", &mut self.cache_index),
            ("cache_vectors", &mut self.cache_vectors),
            ("adapter", &mut self.adapter),
            ("report", &mut self.report),
            ("pairs", &mut self.pairs),
            ("single_word_cues", &mut self.single_word_cues),
            ("multi_word_cues", &mut self.multi_word_cues),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Fixed report timestamp; otherwise `SOURCE_DATE_EPOCH` or the current time.
    pub timestamp: Option<String>,
}

fn default_workers() -> usize {
    4
}

fn default_failure_ceiling() -> f64 {
    0.1
}

fn default_backend() -> BackendSpec {
    BackendSpec::HashStub { dim: 64, seed: 0 }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub worker_count: usize,
    /// Distillation exits nonzero unless the anchor failure rate is below this.
    #[serde(default = "default_failure_ceiling")]
    pub max_failure_rate: f64,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_backend")]
    pub backend: BackendSpec,
    #[serde(default)]
    pub paths: PathsConfig,
    /// Benchmark name to file.
    #[serde(default)]
    pub benchmarks: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub eval: EvalSection,
}

fn var_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"))
}

/// Replaces `${NAME}` with the value of environment variable `NAME`.
pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, CliError> {
    let mut missing = None;
    let out = var_regex().replace_all(text, |c: &regex::Captures| match lookup(&c[1]) {
        Some(v) => v,
        None => {
            missing.get_or_insert_with(|| c[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(name) => Err(CliError::Config(format!("environment variable `{name}` referenced by config is not set"))),
        None => Ok(out.into_owned()),
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let text = interpolate_env(text, |k| std::env::var(k).ok())?;
        toml::from_str(&text).map_err(config_err)
    }

    /// Reads a config file; relative paths inside it are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        for (_, p) in cfg.paths.entries_mut() {
            if let Some(p) = p {
                resolve(&base, p);
            }
        }
        for p in cfg.benchmarks.values_mut() {
            resolve(&base, p);
        }
        for p in [&mut cfg.provider.replay_dir, &mut cfg.provider.record_dir].into_iter().flatten() {
            resolve(&base, p);
        }
        if let BackendSpec::FileCache {
            index_path,
            vectors_path,
        } = &mut cfg.backend
        {
            resolve(&base, index_path);
            resolve(&base, vectors_path);
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seed,
            loss: self.loss,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
        }
    }

    pub fn benchmark_files(&self) -> Result<BTreeMap<Benchmark, PathBuf>, CliError> {
        self.benchmarks
            .iter()
            .map(|(name, p)| Ok((name.parse::<Benchmark>().map_err(config_err)?, p.clone())))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.worker_count == 0 {
            return Err(CliError::Config("worker_count must be >= 1".into()));
        }
        if !(self.max_failure_rate > 0.0 && self.max_failure_rate <= 1.0) {
            return Err(CliError::Config(format!(
                "max_failure_rate must lie in (0, 1], got {}",
                self.max_failure_rate
            )));
        }
        self.provider.validate().map_err(config_err)?;
        self.loss.validate().map_err(config_err)?;
        self.train_config().validate().map_err(config_err)?;
        self.backend.validate().map_err(config_err)?;
        let benches = self.benchmark_files()?;

        let mut seen: BTreeMap<&Path, String> = BTreeMap::new();
        let mut paths = self.paths.clone();
        let named: Vec<(String, PathBuf)> = paths
            .entries_mut()
            .into_iter()
            .filter_map(|(k, p)| p.clone().map(|p| (format!("paths.{k}"), p)))
            .chain(benches.iter().map(|(b, p)| (format!("benchmarks.{b}"), p.clone())))
            .collect();
        for (role, p) in &named {
            if let Some(other) = seen.insert(p.as_path(), role.clone()) {
                return Err(CliError::Config(format!(
                    "{other} and {role} both point to {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    fn apply(&mut self, args: &CommonArgs) {
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if let Some(w) = args.workers {
            self.worker_count = w;
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("paths.{key} is not set")))
}

fn load_for(args: &CommonArgs, out_key: impl FnOnce(&mut PathsConfig) -> &mut Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(args);
    if let Some(out) = &args.out {
        *out_key(&mut cfg.paths) = Some(out.clone());
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn provider_err(e: ProviderError) -> CliError {
    match e {
        ProviderError::MissingApiKey(_) | ProviderError::Config(_) => config_err(e),
        other => CliError::Operational(other.into()),
    }
}

fn make_provider(cfg: &RunConfig) -> Result<Box<dyn ChatProvider>, CliError> {
    build_provider(&cfg.provider, Arc::new(SystemClock::default())).map_err(provider_err)
}

fn make_backend(cfg: &RunConfig) -> Result<Box<dyn Embedder>, CliError> {
    cfg.backend.build(Arc::new(SystemClock::default())).map_err(|e| match e {
        EmbedError::InvalidSpec(_) => config_err(e),
        other => CliError::Operational(anyhow::Error::new(other).context("building embedding backend")),
    })
}

#[derive(Serialize)]
struct FailureReport<'a> {
    anchors: usize,
    failed_anchors: usize,
    failure_rate: f64,
    variants: usize,
    failures: &'a [AnchorFailure],
}

pub fn cmd_distill(args: &DistillArgs) -> Result<(), CliError> {
    let mut cfg = load_for(&args.common, |p| &mut p.variants)?;
    if let Some(p) = &args.single_word_cues {
        cfg.paths.single_word_cues = Some(p.clone());
    }
    if let Some(p) = &args.multi_word_cues {
        cfg.paths.multi_word_cues = Some(p.clone());
    }
    if let Some(r) = args.max_failure_rate {
        cfg.max_failure_rate = r;
    }
    let variants_path = require(&cfg.paths.variants, "variants")?.to_path_buf();
    if cfg.paths.failures.is_none() {
        cfg.paths.failures = Some(variants_path.with_extension("failures.json"));
    }
    cfg.validate()?;
    let anchors_path = require(&cfg.paths.anchors, "anchors")?;
    let inventory = match (&cfg.paths.single_word_cues, &cfg.paths.multi_word_cues) {
        (Some(s), Some(m)) => CueInventory::load(s, m).map_err(config_err)?,
        (None, None) => CueInventory::default(),
        _ => {
            return Err(CliError::Config(
                "single_word_cues and multi_word_cues must be given together".into(),
            ))
        }
    };

    let anchors = read_anchors(anchors_path).context("reading anchors")?;
    let provider = make_provider(&cfg)?;
    tracing::info!(anchors = anchors.len(), workers = cfg.worker_count, seed = cfg.seed, "distilling");
    let out = distill_batch(&anchors, &inventory, provider.as_ref(), cfg.seed, cfg.worker_count);

    write_variants(&variants_path, &out.variants).context("writing variants")?;
    let failures_path = cfg.paths.failures.as_deref().expect("set above");
    let rate = out.failure_rate();
    write_json(
        failures_path,
        &FailureReport {
            anchors: out.anchors,
            failed_anchors: out.failures.len(),
            failure_rate: rate,
            variants: out.variants.len(),
            failures: &out.failures,
        },
    )?;

    let mut by_stage: BTreeMap<FailureStage, usize> = BTreeMap::new();
    for f in out.failures.iter().flat_map(|f| &f.failures) {
        *by_stage.entry(f.stage).or_default() += 1;
    }
    println!("{:<24} {:>8}", "anchors", out.anchors);
    println!("{:<24} {:>8}", "variants", out.variants.len());
    println!("{:<24} {:>8}", "failed anchors", out.failures.len());
    println!("{:<24} {:>8.4}", "failure rate", rate);
    for (stage, n) in &by_stage {
        let name = serde_json::to_value(stage).unwrap_or_default();
        println!("  {:<22} {:>8}", name.as_str().unwrap_or_default(), n);
    }
    tracing::info!(variants = out.variants.len(), failed = out.failures.len(), rate, "distillation finished");

    if rate < cfg.max_failure_rate {
        Ok(())
    } else {
        Err(anyhow!(
            "failure rate {rate:.4} is not below the ceiling {} ({} of {} anchors failed)",
            cfg.max_failure_rate,
            out.failures.len(),
            out.anchors
        )
        .into())
    }
}

pub fn cmd_build(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_for(args, |p| &mut p.triples)?;
    cfg.validate()?;
    let anchors_path = require(&cfg.paths.anchors, "anchors")?;
    let variants_path = require(&cfg.paths.variants, "variants")?;
    let triples_path = require(&cfg.paths.triples, "triples")?;

    let anchors = read_anchors(anchors_path).context("reading anchors")?;
    let variants = read_variants(variants_path).context("reading variants")?;
    let mut grouped: BTreeMap<&str, Vec<_>> = anchors.iter().map(|a| (a.id.as_str(), Vec::new())).collect();
    for v in variants {
        grouped
            .get_mut(v.anchor_id.as_str())
            .ok_or_else(|| anyhow!("variant references unknown anchor `{}`", v.anchor_id))?
            .push(v);
    }

    let mut kept = Vec::new();
    let mut dropped: Vec<Dropped> = Vec::new();
    let mut counts: BTreeMap<VariantKind, (usize, usize)> = VariantKind::ALL.iter().map(|k| (*k, (0, 0))).collect();
    let mut expected = 0usize;
    for anchor in &anchors {
        let outcome = filter_variants(anchor, &grouped[anchor.id.as_str()], &cfg.filter).map_err(anyhow::Error::from)?;
        let negs = outcome.kept.iter().filter(|v| !v.kind.is_hedge()).count();
        expected += negs * (outcome.kept.len() - negs);
        for v in &outcome.kept {
            counts.entry(v.kind).or_default().0 += 1;
        }
        for d in &outcome.dropped {
            counts.entry(d.variant.kind).or_default().1 += 1;
        }
        kept.extend(outcome.kept);
        dropped.extend(outcome.dropped);
    }
    let built = build_triples(&anchors, &kept);
    write_triples(triples_path, &built.triples).context("writing triples")?;
    if let Some(p) = &cfg.paths.dropped {
        write_jsonl(p, &dropped).context("writing dropped variants")?;
    }

    println!("{:<12} {:>8} {:>8}", "kind", "kept", "dropped");
    for (kind, (k, d)) in &counts {
        println!("{:<12} {:>8} {:>8}", kind.label(), k, d);
    }
    println!("{:<21} {:>8}", "sum n*h", expected);
    println!("{:<21} {:>8}", "degenerate skipped", built.skipped_degenerate);
    println!("{:<21} {:>8}", "triples", built.triples.len());
    tracing::info!(triples = built.triples.len(), kept = kept.len(), dropped = dropped.len(), "triples built");
    Ok(())
}

/// Embeds every distinct text once and returns the vectors in `texts` order.
fn embed_texts(
    backend: &dyn Embedder,
    cache: Option<&VectorCache>,
    texts: &[String],
) -> anyhow::Result<Vec<crate::contrastive::EmbeddingVector>> {
    Ok(match cache {
        Some(cache) => CacheFirst {
            cache,
            fallback: backend,
        }
        .embed_batch(texts)?,
        None => backend.embed_batch(texts)?,
    })
}

#[derive(Serialize)]
struct AdapterSidecar<'a> {
    format: &'static str,
    dim: usize,
    triples: usize,
    backend: String,
    hyperparams: &'a TrainConfig,
    initial_loss: f64,
    final_loss: f64,
    epoch_losses: &'a [f64],
    epoch_train_losses: &'a [f64],
    initial_margin: f64,
    final_margin: f64,
    steps: usize,
}

/// Sidecar path holding hyperparameters and the loss trace of an adapter file.
pub fn sidecar_path(adapter: &Path) -> PathBuf {
    let mut name = adapter.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

pub fn cmd_train(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_for(args, |p| &mut p.adapter)?;
    cfg.validate()?;
    let triples_path = require(&cfg.paths.triples, "triples")?;
    let adapter_path = require(&cfg.paths.adapter, "adapter")?;
    let train_cfg = cfg.train_config();

    let triples = read_triple_texts(triples_path).context("reading triples")?;
    if triples.is_empty() {
        return Err(anyhow!("{} holds no triples", triples_path.display()).into());
    }
    let backend = make_backend(&cfg)?;
    let cache = match (&cfg.paths.cache_index, &cfg.paths.cache_vectors) {
        (Some(i), Some(v)) if i.exists() && v.exists() => {
            Some(VectorCache::read(i, v).context("reading vector cache")?)
        }
        _ => None,
    };
    let unique: BTreeSet<&str> = triples
        .iter()
        .flat_map(|t| [t.anchor.as_str(), &t.positive, &t.negative])
        .collect();
    let texts: Vec<String> = unique.into_iter().map(String::from).collect();
    let vectors = embed_texts(backend.as_ref(), cache.as_ref(), &texts).context("embedding triples")?;
    let lookup: BTreeMap<&str, _> = texts.iter().map(String::as_str).zip(vectors).collect();
    let pick = |f: fn(&crate::filter::TripleTexts) -> &str| triples.iter().map(|t| lookup[f(t)].clone()).collect();
    let batch = TripleBatch::new(pick(|t| &t.anchor), pick(|t| &t.positive), pick(|t| &t.negative))
        .map_err(anyhow::Error::from)?;

    tracing::info!(triples = batch.len(), dim = batch.dim(), seed = cfg.seed, "training adapter");
    let report: TrainReport = pool(cfg.worker_count)?
        .install(|| train_adapter(&batch, &train_cfg))
        .map_err(|e| match e {
            crate::contrastive::ContrastiveError::InvalidConfig(_) => config_err(e),
            other => CliError::Operational(other.into()),
        })?;
    report.params.save(adapter_path).context("writing adapter")?;
    write_json(
        &sidecar_path(adapter_path),
        &AdapterSidecar {
            format: "HADP",
            dim: report.params.dim(),
            triples: batch.len(),
            backend: backend.fingerprint(),
            hyperparams: &train_cfg,
            initial_loss: report.initial_loss,
            final_loss: report.final_loss(),
            epoch_losses: &report.epoch_losses,
            epoch_train_losses: &report.epoch_train_losses,
            initial_margin: report.initial_margin,
            final_margin: report.final_margin,
            steps: report.steps,
        },
    )?;

    println!("{:>6} {:>12} {:>12}", "epoch", "loss", "train_loss");
    println!("{:>6} {:>12.6} {:>12}", 0, report.initial_loss, "-");
    for (i, (l, t)) in report.epoch_losses.iter().zip(&report.epoch_train_losses).enumerate() {
        println!("{:>6} {:>12.6} {:>12.6}", i + 1, l, t);
    }
    println!("margin {:.6} -> {:.6}", report.initial_margin, report.final_margin);
    tracing::info!(initial = report.initial_loss, last = report.final_loss(), "training finished");
    Ok(())
}

fn report_timestamp(cfg: &RunConfig) -> Result<String, CliError> {
    if let Some(t) = &cfg.eval.timestamp {
        return Ok(t.clone());
    }
    let secs = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .map_err(|_| CliError::Config(format!("SOURCE_DATE_EPOCH `{v}` is not an integer")))?,
        Err(_) => chrono::Utc::now().timestamp(),
    };
    let t = chrono::DateTime::from_timestamp(secs, 0)
        .ok_or_else(|| CliError::Config(format!("timestamp {secs} out of range")))?;
    Ok(t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

fn selected_benchmarks(
    cfg: &RunConfig,
    requested: &[Benchmark],
) -> Result<Vec<(Benchmark, BenchmarkData)>, CliError> {
    let files = cfg.benchmark_files()?;
    let chosen: BTreeSet<Benchmark> = if requested.is_empty() {
        files.keys().copied().collect()
    } else {
        requested.iter().copied().collect()
    };
    if chosen.is_empty() {
        return Err(CliError::Config("no benchmarks configured".into()));
    }
    chosen
        .into_iter()
        .map(|b| {
            let path = files
                .get(&b)
                .ok_or_else(|| CliError::Usage(format!("benchmark `{b}` has no file under [benchmarks]")))?;
            let data = load_benchmark(b, path).with_context(|| format!("loading {b} from {}", path.display()))?;
            Ok((b, data))
        })
        .collect()
}

fn judge_reports(
    provider: &dyn ChatProvider,
    model: &str,
    benches: &[(Benchmark, BenchmarkData)],
    timestamp: &str,
) -> anyhow::Result<Vec<MetricReport>> {
    let mut reports = Vec::new();
    for (b, data) in benches {
        let summary = match data {
            BenchmarkData::Pairwise(s) => {
                let mut s: Vec<_> = s.iter().collect();
                s.sort_by(|x, y| x.id.cmp(&y.id));
                judge_right_rank(&s.into_iter().map(JudgeSample::Pairwise).collect::<Vec<_>>(), provider)?
            }
            BenchmarkData::Exclusion(s) => {
                let mut s: Vec<_> = s.iter().collect();
                s.sort_by(|x, y| x.id.cmp(&y.id));
                judge_right_rank(&s.into_iter().map(JudgeSample::Exclusion).collect::<Vec<_>>(), provider)?
            }
            BenchmarkData::Scored(s) => judge_spearman(s, provider)?,
        };
        reports.push(MetricReport {
            benchmark: *b,
            metric: b.metric(),
            value: summary.value,
            sample_count: summary.sample_count,
            skipped_count: summary.unparseable,
            backend: format!("llm_judge(model={})", model),
            timestamp: timestamp.to_string(),
        });
    }
    Ok(reports)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut cfg = load_for(&args.common, |p| &mut p.report)?;
    if let Some(a) = &args.adapter {
        cfg.paths.adapter = Some(a.clone());
    }
    cfg.validate()?;
    let timestamp = report_timestamp(&cfg)?;
    let use_adapter = args.with_adapter || args.adapter.is_some() || args.compare;
    let adapter_path = if use_adapter {
        Some(require(&cfg.paths.adapter, "adapter")?.to_path_buf())
    } else {
        None
    };
    let benches = selected_benchmarks(&cfg, &args.benchmarks)?;

    let reports = if args.judge {
        let provider = make_provider(&cfg)?;
        judge_reports(provider.as_ref(), &cfg.provider.model_name, &benches, &timestamp)?
    } else {
        let adapter = adapter_path
            .as_deref()
            .map(AdapterParams::load)
            .transpose()
            .context("reading adapter")?;
        let backend = make_backend(&cfg)?;
        let adapted = eval_embeddings(backend.as_ref(), adapter.as_ref(), &benches, &timestamp)
            .map_err(anyhow::Error::from)?;
        if args.compare {
            let base = eval_embeddings(backend.as_ref(), None, &benches, &timestamp).map_err(anyhow::Error::from)?;
            println!("{:<10} {:>12} {:>12} {:>12}", "benchmark", "base", "adapter", "delta");
            for (b, a) in base.iter().zip(&adapted) {
                println!(
                    "{:<10} {:>12.4} {:>12.4} {:>+12.4}",
                    b.benchmark.name(),
                    b.value,
                    a.value,
                    a.value - b.value
                );
            }
            base.into_iter().chain(adapted).collect()
        } else {
            adapted
        }
    };

    if !args.compare {
        print!("{}", render_report_table(&reports));
    }
    if let Some(p) = &cfg.paths.report {
        write_json(p, &reports)?;
    }
    tracing::info!(reports = reports.len(), "evaluation finished");
    Ok(())
}

pub fn cmd_embed_cache(args: &EmbedCacheArgs) -> Result<(), CliError> {
    let mut cfg = load_for(&args.common, |p| &mut p.cache_vectors)?;
    let vectors_path = require(&cfg.paths.cache_vectors, "cache_vectors")?.to_path_buf();
    if args.common.out.is_some() || cfg.paths.cache_index.is_none() {
        cfg.paths.cache_index = Some(vectors_path.with_extension("index.jsonl"));
    }
    cfg.validate()?;
    let index_path = cfg.paths.cache_index.clone().expect("set above");

    let mut texts: BTreeSet<String> = BTreeSet::new();
    if let Some(p) = &cfg.paths.triples {
        for t in read_triple_texts(p).context("reading triples")? {
            texts.extend([t.anchor, t.positive, t.negative]);
        }
    }
    if args.include_benchmarks {
        for (_, data) in selected_benchmarks(&cfg, &[])? {
            texts.extend(data.texts().into_iter().map(String::from));
        }
    }
    if texts.is_empty() {
        return Err(anyhow!("nothing to embed: paths.triples is unset or empty").into());
    }
    let texts: Vec<String> = texts.into_iter().collect();
    let backend = make_backend(&cfg)?;
    let vectors = backend.embed_batch(&texts).context("embedding texts")?;
    VectorCache::write(&texts, &vectors, &index_path, &vectors_path).context("writing vector cache")?;
    println!("{:<10} {:>8}", "texts", texts.len());
    println!("{:<10} {:>8}", "dim", vectors.first().map_or(0, |v| v.dim()));
    tracing::info!(texts = texts.len(), index = %index_path.display(), vectors = %vectors_path.display(), "cache written");
    Ok(())
}

pub fn cmd_export_pairs(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load_for(args, |p| &mut p.pairs)?;
    cfg.validate()?;
    let triples_path = require(&cfg.paths.triples, "triples")?;
    let pairs_path = require(&cfg.paths.pairs, "pairs")?;
    let triples = read_triples(triples_path).context("reading triples")?;
    let pairs = triples_to_pairs(&triples);
    write_jsonl(pairs_path, &pairs).context("writing pairs")?;
    println!("{:<8} {:>8}", "triples", triples.len());
    println!("{:<8} {:>8}", "pairs", pairs.len());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Distill(a) => cmd_distill(a),
        Command::Build(a) => cmd_build(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::EmbedCache(a) => cmd_embed_cache(a),
        Command::ExportPairs(a) => cmd_export_pairs(a),
    }
}

fn init_logging() {
    use tracing_subscriber::EnvFilter;
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses `args`, runs the subcommand and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    init_logging();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %e, "command failed");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
