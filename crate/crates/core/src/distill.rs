//! LLM distillation of negated and hedged variants.
//!
//! Each anchor gets two chat completions (negation prompt, hedging prompt with
//! sampled cues). Responses follow a numbered scaffold, `1. "verbal": ...`,
//! and are parsed with a small line grammar. Anything outside the grammar is
//! rejected instead of guessed at.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{join_url, Clock, HttpError, JsonClient, RateLimiter, RetryPolicy, SystemClock};
use crate::jsonl::{read_jsonl_with, write_jsonl, JsonlError};
use crate::taxonomy::{
    render_hedging_prompt, render_negation_prompt, sample_cues, CueInventory, HedgeType, NegationType,
    VariantKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: String,
    pub text: String,
    pub source: String,
}

/// Reads anchors, rejecting empty texts and duplicate ids.
pub fn read_anchors(path: &Path) -> Result<Vec<Anchor>, JsonlError> {
    let mut seen = HashSet::new();
    read_jsonl_with(path, |a: Anchor, _| {
        if a.text.trim().is_empty() {
            return Err(format!("anchor `{}` has empty text", a.id));
        }
        if !seen.insert(a.id.clone()) {
            return Err(format!("duplicate anchor id `{}`", a.id));
        }
        Ok(a)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Http,
    /// Serve recorded responses from `replay_dir`, keyed by request hash.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub endpoint_url: String,
    pub chat_path: String,
    /// Name of the request field carrying the model, for providers that differ.
    pub model_field: String,
    pub model_name: String,
    /// JSON pointer to the completion text inside the response body.
    pub response_pointer: String,
    /// Environment variable holding the API key. The key itself never lives in config.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub requests_per_minute: u32,
    pub timeout_secs: f64,
    pub replay_dir: Option<PathBuf>,
    /// When set, every live response is written here in replay format.
    pub record_dir: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mode: ProviderMode::Http,
            endpoint_url: "https://api.openai.com".into(),
            chat_path: "/v1/chat/completions".into(),
            model_field: "model".into(),
            model_name: "gpt-3.5-turbo".into(),
            response_pointer: "/choices/0/message/content".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.7,
            max_retries: 3,
            requests_per_minute: 60,
            timeout_secs: 60.0,
            replay_dir: None,
            record_dir: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid provider config: {0}")]
    Provider(String),
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Provider(m.to_string()));
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad("temperature must be finite and >= 0");
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be > 0");
        }
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return bad("timeout_secs must be positive");
        }
        match self.mode {
            ProviderMode::Replay if self.replay_dir.is_none() => bad("replay mode needs replay_dir"),
            ProviderMode::Replay => Ok(()),
            ProviderMode::Http => {
                if !well_formed_url(&self.endpoint_url) {
                    return bad("endpoint_url must be an http(s) URL with a host");
                }
                if self.api_key_env.trim().is_empty() {
                    return bad("api_key_env must name an environment variable");
                }
                Ok(())
            }
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Stable hash identifying one request; used as replay key and audit id.
    pub fn request_key(&self, prompt: &str) -> String {
        let canonical = json!({
            "model": self.model_name,
            "temperature": self.temperature,
            "prompt": prompt,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

pub(crate) fn well_formed_url(url: &str) -> bool {
    let rest = url
        .strip_prefix("http://")
        .or_else(|| url.strip_prefix("https://"));
    match rest {
        Some(r) => {
            let host = r.split(['/', '?', '#']).next().unwrap_or("");
            !host.is_empty() && !host.contains(char::is_whitespace)
        }
        None => false,
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("environment variable `{0}` with the API key is not set")]
    MissingApiKey(String),
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("no recorded response for request {key} in {dir}")]
    ReplayMiss { key: String, dir: PathBuf },
    #[error("replay record {path}: {message}")]
    ReplayCorrupt { path: PathBuf, message: String },
    #[error("recording response to {path}: {message}")]
    Record { path: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Request hash; doubles as the replay file name.
    pub response_id: String,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<Completion, ProviderError>;
}

/// One recorded request/response, stored as `<dir>/<id>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub model: String,
    pub prompt: String,
    pub response: String,
}

impl ResponseRecord {
    pub fn path_in(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.json"))
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf, ProviderError> {
        let path = Self::path_in(dir, &self.id);
        let rec_err = |m: String| ProviderError::Record {
            path: path.clone(),
            message: m,
        };
        std::fs::create_dir_all(dir).map_err(|e| rec_err(e.to_string()))?;
        let body = serde_json::to_string_pretty(self).map_err(|e| rec_err(e.to_string()))?;
        std::fs::write(&path, body + "\n").map_err(|e| rec_err(e.to_string()))?;
        Ok(path)
    }
}

pub struct HttpChatProvider {
    config: ProviderConfig,
    api_key: String,
    client: JsonClient,
}

impl HttpChatProvider {
    pub fn new(config: ProviderConfig, clock: Arc<dyn Clock>) -> Result<Self, ProviderError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ProviderError::MissingApiKey(config.api_key_env.clone()))?;
        let limiter = Arc::new(RateLimiter::new(config.requests_per_minute, clock.clone()));
        let retry = RetryPolicy {
            max_retries: config.max_retries,
            ..RetryPolicy::default()
        };
        let client = JsonClient::new(config.timeout(), retry, Some(limiter), clock);
        Ok(HttpChatProvider {
            config,
            api_key,
            client,
        })
    }

    /// Sends one request and also reports how many HTTP attempts it took.
    pub fn complete_counted(&self, prompt: &str) -> Result<(Completion, u32), ProviderError> {
        let mut body = json!({
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.config.temperature,
        });
        body[self.config.model_field.as_str()] = Value::String(self.config.model_name.clone());
        let headers = vec![("Authorization".to_string(), format!("Bearer {}", self.api_key))];
        let url = join_url(&self.config.endpoint_url, &self.config.chat_path);
        let resp = self.client.post_json(&url, &headers, &body)?;
        let text = resp
            .body
            .pointer(&self.config.response_pointer)
            .and_then(Value::as_str)
            .ok_or_else(|| {
                HttpError::Malformed(format!("no string at `{}` in response", self.config.response_pointer))
            })?
            .to_string();
        let id = self.config.request_key(prompt);
        if let Some(dir) = &self.config.record_dir {
            ResponseRecord {
                id: id.clone(),
                model: self.config.model_name.clone(),
                prompt: prompt.to_string(),
                response: text.clone(),
            }
            .write_to(dir)?;
        }
        Ok((Completion { text, response_id: id }, resp.attempts))
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, prompt: &str) -> Result<Completion, ProviderError> {
        self.complete_counted(prompt).map(|(c, _)| c)
    }
}

pub struct ReplayProvider {
    config: ProviderConfig,
    dir: PathBuf,
}

impl ReplayProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let dir = config
            .replay_dir
            .clone()
            .ok_or_else(|| ConfigError::Provider("replay mode needs replay_dir".into()))?;
        Ok(ReplayProvider { config, dir })
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, prompt: &str) -> Result<Completion, ProviderError> {
        let key = self.config.request_key(prompt);
        let path = ResponseRecord::path_in(&self.dir, &key);
        let raw = match std::fs::read_to_string(&path) {
            Ok(r) => r,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ProviderError::ReplayMiss {
                    key,
                    dir: self.dir.clone(),
                })
            }
            Err(e) => {
                return Err(ProviderError::ReplayCorrupt {
                    path,
                    message: e.to_string(),
                })
            }
        };
        let rec: ResponseRecord = serde_json::from_str(&raw).map_err(|e| ProviderError::ReplayCorrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if rec.prompt != prompt {
            return Err(ProviderError::ReplayCorrupt {
                path,
                message: "recorded prompt differs from request".into(),
            });
        }
        Ok(Completion {
            text: rec.response,
            response_id: key,
        })
    }
}

pub fn build_provider(config: &ProviderConfig, clock: Arc<dyn Clock>) -> Result<Box<dyn ChatProvider>, ProviderError> {
    Ok(match config.mode {
        ProviderMode::Http => Box::new(HttpChatProvider::new(config.clone(), clock)?),
        ProviderMode::Replay => Box::new(ReplayProvider::new(config.clone())?),
    })
}

/// One-shot completion with a freshly built provider on the system clock.
pub fn complete(prompt: &str, config: &ProviderConfig) -> Result<String, ProviderError> {
    let provider = build_provider(config, Arc::new(SystemClock::default()))?;
    provider.complete(prompt).map(|c| c.text)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing label `{0}`")]
    MissingLabel(String),
    #[error("label `{0}` appears more than once")]
    DuplicateLabel(String),
    #[error("unrecognized label `{0}`")]
    UnrecognizedLabel(String),
    #[error("empty sentence for label `{0}`")]
    EmptySentence(String),
}

fn item_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^(?:[-*•]\s*)?(?:\*\*)?\d+\s*[.)]\s*(?:\*\*)?["“”']?([A-Za-z_-]+)["“”']?(?:\*\*)?\s*:\s*(?:\*\*)?\s*(.*)$"#)
            .expect("static regex")
    })
}

/// Parses `<n>. "<label>": <sentence>` lines into one entry per label.
/// Lines that are not numbered items (preambles, blank lines) are skipped.
fn parse_numbered<L: Copy + Ord>(raw: &str, labels: &[(L, &str)]) -> Result<BTreeMap<L, String>, ParseError> {
    let mut out = BTreeMap::new();
    for line in raw.lines() {
        let Some(caps) = item_regex().captures(line.trim()) else {
            continue;
        };
        let label = &caps[1];
        let (key, name) = labels
            .iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(label))
            .copied()
            .ok_or_else(|| ParseError::UnrecognizedLabel(label.to_string()))?;
        let sentence = caps[2].trim().trim_end_matches("**").trim();
        if sentence.is_empty() {
            return Err(ParseError::EmptySentence(name.to_string()));
        }
        if out.insert(key, sentence.to_string()).is_some() {
            return Err(ParseError::DuplicateLabel(name.to_string()));
        }
    }
    if let Some((_, name)) = labels.iter().find(|(k, _)| !out.contains_key(k)) {
        return Err(ParseError::MissingLabel(name.to_string()));
    }
    Ok(out)
}

pub fn parse_negation_response(raw: &str) -> Result<BTreeMap<NegationType, String>, ParseError> {
    let labels: Vec<_> = NegationType::ALL.iter().map(|t| (*t, t.label())).collect();
    parse_numbered(raw, &labels)
}

pub fn parse_hedging_response(raw: &str) -> Result<BTreeMap<HedgeType, String>, ParseError> {
    let labels: Vec<_> = HedgeType::ALL.iter().map(|t| (*t, t.label())).collect();
    parse_numbered(raw, &labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedVariant {
    pub anchor_id: String,
    pub kind: VariantKind,
    pub cue: Option<String>,
    pub text: String,
    pub raw_response_id: String,
}

impl GeneratedVariant {
    pub fn check(&self) -> Result<(), String> {
        if self.kind.is_hedge() != self.cue.is_some() {
            return Err(format!(
                "variant of `{}`: cue must be present exactly for hedge kinds (kind `{}`)",
                self.anchor_id, self.kind
            ));
        }
        if self.text.trim().is_empty() {
            return Err(format!("variant of `{}` has empty text", self.anchor_id));
        }
        Ok(())
    }
}

pub fn read_variants(path: &Path) -> Result<Vec<GeneratedVariant>, JsonlError> {
    read_jsonl_with(path, |v: GeneratedVariant, _| v.check().map(|_| v))
}

pub fn write_variants(path: &Path, variants: &[GeneratedVariant]) -> Result<(), JsonlError> {
    write_jsonl(path, variants)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureStage {
    Prompt,
    NegationRequest,
    NegationParse,
    HedgingRequest,
    HedgingParse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: FailureStage,
    pub message: String,
    pub raw_response_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorFailure {
    pub anchor_id: String,
    pub failures: Vec<StageFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnchorOutcome {
    pub variants: Vec<GeneratedVariant>,
    pub failure: Option<AnchorFailure>,
}

fn failed(stage: FailureStage, message: impl ToString, id: Option<String>) -> StageFailure {
    StageFailure {
        stage,
        message: message.to_string(),
        raw_response_id: id,
    }
}

/// Generates the four negations and two hedges of one anchor.
///
/// `ordinal` is the anchor's position in its input file and selects the
/// hedge cues together with `seed`. The two requests fail independently.
pub fn distill_anchor(
    anchor: &Anchor,
    ordinal: u64,
    inventory: &CueInventory,
    provider: &dyn ChatProvider,
    seed: u64,
) -> AnchorOutcome {
    let mut out = AnchorOutcome::default();
    let mut failures = Vec::new();

    match render_negation_prompt(&anchor.text) {
        Err(e) => failures.push(failed(FailureStage::Prompt, e, None)),
        Ok(prompt) => match provider.complete(&prompt) {
            Err(e) => failures.push(failed(FailureStage::NegationRequest, e, None)),
            Ok(c) => match parse_negation_response(&c.text) {
                Err(e) => failures.push(failed(FailureStage::NegationParse, e, Some(c.response_id))),
                Ok(map) => out.variants.extend(map.into_iter().map(|(kind, text)| GeneratedVariant {
                    anchor_id: anchor.id.clone(),
                    kind: VariantKind::Negation(kind),
                    cue: None,
                    text,
                    raw_response_id: c.response_id.clone(),
                })),
            },
        },
    }

    let hedging = sample_cues(inventory, seed, ordinal).and_then(|(word, phrase)| {
        render_hedging_prompt(&anchor.text, &word, &phrase).map(|p| (p, word, phrase))
    });
    match hedging {
        Err(e) => failures.push(failed(FailureStage::Prompt, e, None)),
        Ok((prompt, word, phrase)) => match provider.complete(&prompt) {
            Err(e) => failures.push(failed(FailureStage::HedgingRequest, e, None)),
            Ok(c) => match parse_hedging_response(&c.text) {
                Err(e) => failures.push(failed(FailureStage::HedgingParse, e, Some(c.response_id))),
                Ok(map) => out.variants.extend(map.into_iter().map(|(kind, text)| GeneratedVariant {
                    anchor_id: anchor.id.clone(),
                    kind: VariantKind::Hedge(kind),
                    cue: Some(match kind {
                        HedgeType::Word => word.clone(),
                        HedgeType::Phrase => phrase.clone(),
                    }),
                    text,
                    raw_response_id: c.response_id.clone(),
                })),
            },
        },
    }

    if !failures.is_empty() {
        out.failure = Some(AnchorFailure {
            anchor_id: anchor.id.clone(),
            failures,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DistillOutput {
    /// Sorted by anchor id, then kind.
    pub variants: Vec<GeneratedVariant>,
    /// Sorted by anchor id.
    pub failures: Vec<AnchorFailure>,
    pub anchors: usize,
}

impl DistillOutput {
    pub fn failure_rate(&self) -> f64 {
        if self.anchors == 0 {
            0.0
        } else {
            self.failures.len() as f64 / self.anchors as f64
        }
    }
}

/// Distills all anchors on a pool of `workers` threads. Output order is
/// canonical and does not depend on scheduling.
pub fn distill_batch(
    anchors: &[Anchor],
    inventory: &CueInventory,
    provider: &dyn ChatProvider,
    seed: u64,
    workers: usize,
) -> DistillOutput {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<AnchorOutcome> = pool.install(|| {
        anchors
            .par_iter()
            .enumerate()
            .map(|(i, a)| distill_anchor(a, i as u64, inventory, provider, seed))
            .collect()
    });
    let mut out = DistillOutput {
        anchors: anchors.len(),
        ..Default::default()
    };
    for o in outcomes {
        out.variants.extend(o.variants);
        out.failures.extend(o.failure);
    }
    out.variants.sort_by(|a, b| (&a.anchor_id, a.kind).cmp(&(&b.anchor_id, b.kind)));
    out.failures.sort_by(|a, b| a.anchor_id.cmp(&b.anchor_id));
    out
}
