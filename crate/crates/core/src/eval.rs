//! Negation benchmarks and their metrics. Samples are scored either by
//! embedding cosine similarity or by a chat model acting as judge.
//!
//! Benchmarks come in three normalized shapes: contrast pairs (two queries,
//! two documents), exclusion samples (one query, a relevant and a distractor
//! document) and scored sentence pairs. Ties in rank metrics count as wrong.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::contrastive::{apply_adapter, cosine_sim, AdapterParams, ContrastiveError, EmbeddingVector};
use crate::distill::{ChatProvider, ProviderError};
use crate::embed::{fnv1a64, EmbedError, Embedder};
use crate::jsonl::{read_jsonl_with, JsonlError};
use crate::taxonomy::{JUDGE_RANK_PROMPT, JUDGE_SCORE_PROMPT};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benchmark `{0}` has no samples")]
    EmptyBenchmark(String),
    #[error("scorer failed on sample `{id}`: {message}")]
    Scorer { id: String, message: String },
    #[error("{pred} predictions but {gold} gold scores")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("{0} values are all equal; rank correlation is undefined")]
    Degenerate(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unknown pair kind `{0}` (expected negation, no_evidence or hedged)")]
    UnknownPairKind(String),
    #[error("unknown benchmark `{0}`; valid names: nevir, excluir, cannot, m3")]
    UnknownBenchmark(String),
    #[error(transparent)]
    Load(#[from] JsonlError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Vector(#[from] ContrastiveError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Two contrasting queries; `d1` answers `q1` and `d2` answers `q2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseContrastSample {
    pub id: String,
    pub q1: String,
    #[serde(alias = "doc1")]
    pub d1: String,
    pub q2: String,
    #[serde(alias = "doc2")]
    pub d2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionSample {
    pub id: String,
    pub query: String,
    pub relevant: String,
    pub distractor: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    Negation,
    NoEvidence,
    Hedged,
}

impl FromStr for PairKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negation" => Ok(PairKind::Negation),
            "no_evidence" => Ok(PairKind::NoEvidence),
            "hedged" => Ok(PairKind::Hedged),
            other => Err(EvalError::UnknownPairKind(other.to_string())),
        }
    }
}

impl PairKind {
    /// Gold similarity for a counterfactual pair of this kind.
    pub fn gold(self) -> f64 {
        match self {
            PairKind::Negation => -1.0,
            PairKind::NoEvidence => 0.0,
            PairKind::Hedged => 1.0,
        }
    }
}

/// Gold score for an (original, modified) counterfactual pair by kind name.
pub fn m3_label(pair_kind: &str) -> Result<f64, EvalError> {
    pair_kind.parse::<PairKind>().map(PairKind::gold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub id: String,
    pub s1: String,
    pub s2: String,
    pub gold: f64,
    pub pair_kind: Option<PairKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Nevir,
    Excluir,
    Cannot,
    M3,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::Nevir, Benchmark::Excluir, Benchmark::Cannot, Benchmark::M3];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Nevir => "nevir",
            Benchmark::Excluir => "excluir",
            Benchmark::Cannot => "cannot",
            Benchmark::M3 => "m3",
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            Benchmark::Nevir => Metric::RightRankPairwise,
            Benchmark::Excluir => Metric::RightRankSingle,
            Benchmark::Cannot | Benchmark::M3 => Metric::SpearmanRho,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| EvalError::UnknownBenchmark(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RightRankPairwise,
    RightRankSingle,
    SpearmanRho,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkData {
    Pairwise(Vec<PairwiseContrastSample>),
    Exclusion(Vec<ExclusionSample>),
    Scored(Vec<ScoredPair>),
}

impl BenchmarkData {
    pub fn len(&self) -> usize {
        match self {
            BenchmarkData::Pairwise(s) => s.len(),
            BenchmarkData::Exclusion(s) => s.len(),
            BenchmarkData::Scored(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn texts(&self) -> Vec<&str> {
        match self {
            BenchmarkData::Pairwise(s) => s
                .iter()
                .flat_map(|x| [x.q1.as_str(), &x.d1, &x.q2, &x.d2])
                .collect(),
            BenchmarkData::Exclusion(s) => s
                .iter()
                .flat_map(|x| [x.query.as_str(), &x.relevant, &x.distractor])
                .collect(),
            BenchmarkData::Scored(s) => s.iter().flat_map(|x| [x.s1.as_str(), &x.s2]).collect(),
        }
    }
}

fn nonempty(fields: &[(&str, &str)]) -> Result<(), String> {
    match fields.iter().find(|(_, v)| v.trim().is_empty()) {
        Some((name, _)) => Err(format!("field `{name}` is empty")),
        None => Ok(()),
    }
}

pub fn load_benchmark(benchmark: Benchmark, path: &Path) -> Result<BenchmarkData, EvalError> {
    let data = match benchmark {
        Benchmark::Nevir => BenchmarkData::Pairwise(read_jsonl_with(path, |s: PairwiseContrastSample, _| {
            nonempty(&[("q1", &s.q1), ("d1", &s.d1), ("q2", &s.q2), ("d2", &s.d2)])?;
            if s.q1 == s.q2 || s.d1 == s.d2 {
                return Err(format!("sample `{}` repeats a query or document", s.id));
            }
            Ok(s)
        })?),
        Benchmark::Excluir => BenchmarkData::Exclusion(read_jsonl_with(path, |s: ExclusionSample, _| {
            nonempty(&[("query", &s.query), ("relevant", &s.relevant), ("distractor", &s.distractor)])?;
            if s.relevant == s.distractor {
                return Err(format!("sample `{}` has identical documents", s.id));
            }
            Ok(s)
        })?),
        Benchmark::Cannot | Benchmark::M3 => {
            let m3 = benchmark == Benchmark::M3;
            BenchmarkData::Scored(read_jsonl_with(path, |s: ScoredPair, _| {
                nonempty(&[("s1", &s.s1), ("s2", &s.s2)])?;
                if !s.gold.is_finite() {
                    return Err(format!("sample `{}` has non-finite gold", s.id));
                }
                match s.pair_kind {
                    Some(k) if k.gold() != s.gold => {
                        Err(format!("sample `{}`: gold {} disagrees with pair_kind {:?}", s.id, s.gold, k))
                    }
                    None if m3 => Err(format!("sample `{}` lacks pair_kind", s.id)),
                    _ => Ok(s),
                }
            })?)
        }
    };
    if data.is_empty() {
        return Err(EvalError::EmptyBenchmark(benchmark.name().into()));
    }
    Ok(data)
}

fn sorted_by_id<T>(samples: &[T], id: impl Fn(&T) -> &str) -> Vec<&T> {
    let mut v: Vec<&T> = samples.iter().collect();
    v.sort_by(|a, b| id(a).cmp(id(b)));
    v
}

/// Percentage of samples where each query scores its own document strictly
/// above the other one.
pub fn pairwise_right_rank<F, E>(samples: &[PairwiseContrastSample], mut scorer: F) -> Result<f64, EvalError>
where
    F: FnMut(&str, &str) -> Result<f64, E>,
    E: fmt::Display,
{
    if samples.is_empty() {
        return Err(EvalError::EmptyBenchmark("pairwise".into()));
    }
    let mut correct = 0usize;
    for s in sorted_by_id(samples, |s| &s.id) {
        let mut score = |q: &str, d: &str| {
            scorer(q, d).map_err(|e| EvalError::Scorer {
                id: s.id.clone(),
                message: e.to_string(),
            })
        };
        let first = score(&s.q1, &s.d1)? > score(&s.q1, &s.d2)?;
        let second = score(&s.q2, &s.d2)? > score(&s.q2, &s.d1)?;
        correct += usize::from(first && second);
    }
    Ok(100.0 * correct as f64 / samples.len() as f64)
}

/// Percentage of samples where the relevant document strictly outscores the distractor.
pub fn single_right_rank<F, E>(samples: &[ExclusionSample], mut scorer: F) -> Result<f64, EvalError>
where
    F: FnMut(&str, &str) -> Result<f64, E>,
    E: fmt::Display,
{
    if samples.is_empty() {
        return Err(EvalError::EmptyBenchmark("exclusion".into()));
    }
    let mut correct = 0usize;
    for s in sorted_by_id(samples, |s| &s.id) {
        let mut score = |d: &str| {
            scorer(&s.query, d).map_err(|e| EvalError::Scorer {
                id: s.id.clone(),
                message: e.to_string(),
            })
        };
        correct += usize::from(score(&s.relevant)? > score(&s.distractor)?);
    }
    Ok(100.0 * correct as f64 / samples.len() as f64)
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    if pred.len() < 2 {
        return Err(EvalError::TooFewPoints(pred.len()));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("predictions"));
    }
    if gold.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("gold"));
    }
    if pred.iter().all(|v| *v == pred[0]) {
        return Err(EvalError::Degenerate("prediction"));
    }
    if gold.iter().all(|v| *v == gold[0]) {
        return Err(EvalError::Degenerate("gold"));
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(gold)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub benchmark: Benchmark,
    pub metric: Metric,
    pub value: f64,
    pub sample_count: usize,
    pub skipped_count: usize,
    pub backend: String,
    pub timestamp: String,
}

/// Embedding lookup for one evaluation run (optionally adapted).
pub struct EmbeddedTexts {
    vectors: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddedTexts {
    /// Embeds the distinct texts of all benchmarks with a single backend call.
    pub fn embed(
        backend: &dyn Embedder,
        adapter: Option<&AdapterParams>,
        benchmarks: &[(Benchmark, BenchmarkData)],
    ) -> Result<Self, EvalError> {
        let unique: BTreeSet<&str> = benchmarks.iter().flat_map(|(_, d)| d.texts()).collect();
        let texts: Vec<String> = unique.into_iter().map(String::from).collect();
        if texts.is_empty() {
            return Ok(EmbeddedTexts {
                vectors: BTreeMap::new(),
            });
        }
        let raw = backend.embed_batch(&texts)?;
        if raw.len() != texts.len() {
            return Err(EmbedError::Malformed(format!("asked for {} vectors, got {}", texts.len(), raw.len())).into());
        }
        let vectors = texts
            .into_iter()
            .zip(raw)
            .map(|(t, v)| {
                let v = match adapter {
                    Some(a) => apply_adapter(a, &v)?,
                    None => v,
                };
                Ok((t, v))
            })
            .collect::<Result<_, ContrastiveError>>()?;
        Ok(EmbeddedTexts { vectors })
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64, ContrastiveError> {
        let get = |t: &str| self.vectors.get(t).ok_or(ContrastiveError::EmptyVector);
        cosine_sim(get(a)?, get(b)?)
    }
}

/// Report label for a backend, extended with an adapter digest when one is applied.
pub fn backend_fingerprint(backend: &dyn Embedder, adapter: Option<&AdapterParams>) -> String {
    match adapter {
        None => backend.fingerprint(),
        Some(a) => {
            let digest = hex::encode(Sha256::digest(a.to_bytes()));
            format!("{}+adapter:{}", backend.fingerprint(), &digest[..16])
        }
    }
}

/// Scores each benchmark by cosine similarity of (optionally adapted) embeddings.
///
/// Scored pairs whose cosine is undefined (zero vectors) are skipped and counted.
pub fn eval_embeddings(
    backend: &dyn Embedder,
    adapter: Option<&AdapterParams>,
    benchmarks: &[(Benchmark, BenchmarkData)],
    timestamp: &str,
) -> Result<Vec<MetricReport>, EvalError> {
    for (b, d) in benchmarks {
        if d.is_empty() {
            return Err(EvalError::EmptyBenchmark(b.name().into()));
        }
    }
    let emb = EmbeddedTexts::embed(backend, adapter, benchmarks)?;
    let fingerprint = backend_fingerprint(backend, adapter);
    let mut reports = Vec::with_capacity(benchmarks.len());
    for (bench, data) in benchmarks {
        let (value, skipped) = match data {
            BenchmarkData::Pairwise(s) => (pairwise_right_rank(s, |q, d| emb.cosine(q, d))?, 0),
            BenchmarkData::Exclusion(s) => (single_right_rank(s, |q, d| emb.cosine(q, d))?, 0),
            BenchmarkData::Scored(s) => {
                let mut pred = Vec::with_capacity(s.len());
                let mut gold = Vec::with_capacity(s.len());
                let mut skipped = 0;
                for p in sorted_by_id(s, |p| &p.id) {
                    match emb.cosine(&p.s1, &p.s2) {
                        Ok(c) => {
                            pred.push(c);
                            gold.push(p.gold);
                        }
                        Err(ContrastiveError::ZeroVector) => skipped += 1,
                        Err(e) => return Err(e.into()),
                    }
                }
                (spearman(&pred, &gold)?, skipped)
            }
        };
        reports.push(MetricReport {
            benchmark: *bench,
            metric: bench.metric(),
            value,
            sample_count: data.len(),
            skipped_count: skipped,
            backend: fingerprint.clone(),
            timestamp: timestamp.to_string(),
        });
    }
    Ok(reports)
}

pub fn render_report_table(reports: &[MetricReport]) -> String {
    let mut out = format!(
        "{:<10} {:<20} {:>10} {:>8} {:>8}\n",
        "benchmark", "metric", "value", "samples", "skipped"
    );
    for r in reports {
        let metric = serde_json::to_value(r.metric).unwrap();
        out.push_str(&format!(
            "{:<10} {:<20} {:>10.4} {:>8} {:>8}\n",
            r.benchmark.name(),
            metric.as_str().unwrap_or_default(),
            r.value,
            r.sample_count,
            r.skipped_count
        ));
    }
    out
}

pub fn render_judge_rank_prompt(doc1: &str, doc2: &str, query: &str) -> String {
    JUDGE_RANK_PROMPT
        .render(&[("doc1", doc1), ("doc2", doc2), ("query", query)])
        .expect("judge rank template slots are fixed")
}

pub fn render_judge_score_prompt(s1: &str, s2: &str) -> String {
    JUDGE_SCORE_PROMPT
        .render(&[("s1", s1), ("s2", s2)])
        .expect("judge score template slots are fixed")
}

/// First standalone `1` or `2` in a completion. Digits inside longer numbers
/// (`12`, `1.5`) or words (`S1`) do not count.
pub fn parse_choice(text: &str) -> Option<u8> {
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c != '1' && c != '2' {
            continue;
        }
        let before_ok = i == 0 || !(chars[i - 1].is_alphanumeric() || chars[i - 1] == '.');
        let after_ok = match chars.get(i + 1) {
            None => true,
            Some(n) if n.is_ascii_digit() || n.is_alphabetic() => false,
            Some('.') => !chars.get(i + 2).is_some_and(|d| d.is_ascii_digit()),
            Some(_) => true,
        };
        if before_ok && after_ok {
            return Some(if c == '1' { 1 } else { 2 });
        }
    }
    None
}

fn decimal_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)").expect("static regex"))
}

/// First decimal literal in a completion, clamped to `[-1, 1]`.
pub fn parse_score(text: &str) -> Option<f64> {
    let m = decimal_regex().find(text)?;
    let v: f64 = m.as_str().parse().ok()?;
    v.is_finite().then(|| v.clamp(-1.0, 1.0))
}

/// A sample for the ranking judge.
#[derive(Debug, Clone, Copy)]
pub enum JudgeSample<'a> {
    Pairwise(&'a PairwiseContrastSample),
    Exclusion(&'a ExclusionSample),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRankOutcome {
    pub id: String,
    /// Parsed choice per query, `None` when the answer had no usable 1 or 2.
    pub choices: Vec<Option<u8>>,
    /// Expected choice per query.
    pub expected: Vec<u8>,
}

impl JudgeRankOutcome {
    pub fn correct(&self) -> bool {
        self.choices
            .iter()
            .zip(&self.expected)
            .all(|(c, e)| *c == Some(*e))
    }

    pub fn unparseable(&self) -> usize {
        self.choices.iter().filter(|c| c.is_none()).count()
    }
}

/// Whether the relevant document of an exclusion sample is shown second.
/// Derived from the id so the presentation order is fixed per sample and
/// balanced across a benchmark.
pub fn exclusion_relevant_second(id: &str) -> bool {
    fnv1a64(id.as_bytes()) & 1 == 1
}

/// Asks the chat model which of two documents better fits each query.
///
/// Contrast pairs show `d1` then `d2` for both queries, so the expected
/// answers are 1 for `q1` and 2 for `q2`.
pub fn llm_judge_rank(sample: JudgeSample<'_>, provider: &dyn ChatProvider) -> Result<JudgeRankOutcome, ProviderError> {
    let ask = |doc1: &str, doc2: &str, q: &str| -> Result<Option<u8>, ProviderError> {
        let c = provider.complete(&render_judge_rank_prompt(doc1, doc2, q))?;
        let choice = parse_choice(&c.text);
        if choice.is_none() {
            tracing::warn!(response_id = %c.response_id, answer = %c.text, "unparseable ranking answer");
        }
        Ok(choice)
    };
    Ok(match sample {
        JudgeSample::Pairwise(s) => JudgeRankOutcome {
            id: s.id.clone(),
            choices: vec![ask(&s.d1, &s.d2, &s.q1)?, ask(&s.d1, &s.d2, &s.q2)?],
            expected: vec![1, 2],
        },
        JudgeSample::Exclusion(s) => {
            let second = exclusion_relevant_second(&s.id);
            let (doc1, doc2) = if second {
                (&s.distractor, &s.relevant)
            } else {
                (&s.relevant, &s.distractor)
            };
            JudgeRankOutcome {
                id: s.id.clone(),
                choices: vec![ask(doc1, doc2, &s.query)?],
                expected: vec![if second { 2 } else { 1 }],
            }
        }
    })
}

/// Asks the chat model for a similarity score in `[-1, 1]`; `None` when the
/// answer holds no number.
pub fn llm_judge_score(pair: &ScoredPair, provider: &dyn ChatProvider) -> Result<Option<f64>, ProviderError> {
    let c = provider.complete(&render_judge_score_prompt(&pair.s1, &pair.s2))?;
    let score = parse_score(&c.text);
    if score.is_none() {
        tracing::warn!(response_id = %c.response_id, answer = %c.text, "unparseable score answer");
    }
    Ok(score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub value: f64,
    pub sample_count: usize,
    /// Samples with at least one unusable answer (counted as wrong, or left
    /// out of the correlation).
    pub unparseable: usize,
}

/// Right-rank percentage of the ranking judge over a benchmark.
pub fn judge_right_rank(samples: &[JudgeSample<'_>], provider: &dyn ChatProvider) -> Result<JudgeSummary, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyBenchmark("judge".into()));
    }
    let mut correct = 0;
    let mut unparseable = 0;
    for s in samples {
        let o = llm_judge_rank(*s, provider)?;
        correct += usize::from(o.correct());
        unparseable += usize::from(o.unparseable() > 0);
    }
    Ok(JudgeSummary {
        value: 100.0 * correct as f64 / samples.len() as f64,
        sample_count: samples.len(),
        unparseable,
    })
}

/// Spearman correlation between judge scores and gold over the parseable pairs.
pub fn judge_spearman(pairs: &[ScoredPair], provider: &dyn ChatProvider) -> Result<JudgeSummary, EvalError> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let mut unparseable = 0;
    for p in sorted_by_id(pairs, |p| &p.id) {
        match llm_judge_score(p, provider)? {
            Some(s) => {
                pred.push(s);
                gold.push(p.gold);
            }
            None => unparseable += 1,
        }
    }
    Ok(JudgeSummary {
        value: spearman(&pred, &gold)?,
        sample_count: pairs.len(),
        unparseable,
    })
}
