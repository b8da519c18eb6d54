//! Embedding backends. Besides the remote HTTP service there is an exact-match
//! binary vector cache and a hash embedder that needs no model.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::contrastive::{ContrastiveError, EmbeddingVector};
use crate::http::{join_url, Clock, HttpError, JsonClient, RateLimiter, RetryPolicy, SystemClock};
use crate::jsonl::{read_jsonl_with, write_jsonl, JsonlError};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no texts to embed")]
    EmptyInput,
    #[error("text not in vector cache: {0:?}")]
    CacheMiss(String),
    #[error(transparent)]
    Transport(#[from] HttpError),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("invalid backend spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Vector(#[from] ContrastiveError),
}

pub trait Embedder: Send + Sync {
    /// One vector per text, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    /// Short description identifying the backend and its settings in reports.
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Remote {
        url: String,
        model_name: String,
        #[serde(default = "default_remote_batch")]
        batch_size: usize,
        #[serde(default = "default_remote_timeout")]
        timeout_secs: f64,
        #[serde(default)]
        max_retries: Option<u32>,
        #[serde(default)]
        requests_per_minute: Option<u32>,
    },
    FileCache {
        index_path: PathBuf,
        vectors_path: PathBuf,
    },
    HashStub {
        dim: usize,
        seed: u64,
    },
}

fn default_remote_batch() -> usize {
    32
}

fn default_remote_timeout() -> f64 {
    60.0
}

impl BackendSpec {
    pub fn validate(&self) -> Result<(), EmbedError> {
        match self {
            BackendSpec::Remote {
                url,
                batch_size,
                timeout_secs,
                requests_per_minute,
                ..
            } => {
                if !crate::distill::well_formed_url(url) {
                    return Err(EmbedError::InvalidSpec(format!("bad url `{url}`")));
                }
                if *batch_size == 0 {
                    return Err(EmbedError::InvalidSpec("batch_size must be >= 1".into()));
                }
                if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                    return Err(EmbedError::InvalidSpec("timeout_secs must be positive".into()));
                }
                if *requests_per_minute == Some(0) {
                    return Err(EmbedError::InvalidSpec("requests_per_minute must be > 0".into()));
                }
                Ok(())
            }
            BackendSpec::FileCache { .. } => Ok(()),
            BackendSpec::HashStub { dim, .. } if *dim < 2 => {
                Err(EmbedError::InvalidSpec("hash stub dim must be >= 2".into()))
            }
            BackendSpec::HashStub { .. } => Ok(()),
        }
    }

    pub fn build(&self, clock: Arc<dyn Clock>) -> Result<Box<dyn Embedder>, EmbedError> {
        self.validate()?;
        Ok(match self {
            BackendSpec::Remote {
                url,
                model_name,
                batch_size,
                timeout_secs,
                max_retries,
                requests_per_minute,
            } => {
                let retry = RetryPolicy {
                    max_retries: max_retries.unwrap_or(RetryPolicy::default().max_retries),
                    ..RetryPolicy::default()
                };
                let limiter = requests_per_minute.map(|rpm| Arc::new(RateLimiter::new(rpm, clock.clone())));
                Box::new(RemoteEmbedder {
                    url: url.clone(),
                    model: model_name.clone(),
                    batch_size: *batch_size,
                    client: JsonClient::new(Duration::from_secs_f64(*timeout_secs), retry, limiter, clock),
                })
            }
            BackendSpec::FileCache {
                index_path,
                vectors_path,
            } => Box::new(VectorCache::read(index_path, vectors_path)?),
            BackendSpec::HashStub { dim, seed } => Box::new(HashStub { dim: *dim, seed: *seed }),
        })
    }
}

pub fn embed_batch(backend: &dyn Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    backend.embed_batch(texts)
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)`, from the top 53 bits.
    fn next_signed_unit(&mut self) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        2.0 * u - 1.0
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn expand(state: u64, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64(state);
    (0..dim).map(|_| rng.next_signed_unit()).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Bag-of-tokens embedding: every whitespace token expands to a pseudo-random
/// vector seeded by its FNV-1a hash xor `seed`; the token vectors are averaged
/// and L2-normalized. Token vectors are summed in hash order, so the result
/// does not depend on word order.
pub fn hash_stub_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    let mut hashes: Vec<u64> = text.split_whitespace().map(|t| fnv1a64(t.as_bytes())).collect();
    let pooled = if hashes.is_empty() {
        normalize(expand(seed, dim))
    } else {
        hashes.sort_unstable();
        let mut acc = vec![0.0; dim];
        for h in &hashes {
            for (a, x) in acc.iter_mut().zip(expand(h ^ seed, dim)) {
                *a += x;
            }
        }
        let k = hashes.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        let out = normalize(acc);
        if out.iter().all(|x| *x == 0.0) {
            normalize(expand(seed, dim))
        } else {
            out
        }
    };
    EmbeddingVector::new(pooled).expect("hash stub output is finite and non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashStub {
    pub dim: usize,
    pub seed: u64,
}

impl Embedder for HashStub {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        Ok(texts.iter().map(|t| hash_stub_embed(t, self.dim, self.seed)).collect())
    }

    fn fingerprint(&self) -> String {
        format!("hash_stub(dim={},seed={})", self.dim, self.seed)
    }
}

pub const VECTORS_MAGIC: &[u8; 4] = b"HEDV";
pub const VECTORS_VERSION: u32 = 1;
const VECTORS_HEADER: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{0}: not a vectors file (bad magic)")]
    BadMagic(PathBuf),
    #[error("{path}: unsupported vectors file version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated, expected {expected} bytes but found {actual}")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: {actual} bytes, expected {expected}")]
    TrailingBytes { path: PathBuf, expected: u64, actual: u64 },
    #[error("index entry for {text:?} points at row {offset}, but the file holds {count}")]
    OffsetOutOfRange { text: String, offset: u64, count: u64 },
    #[error("text {0:?} appears twice")]
    DuplicateText(String),
    #[error("{texts} texts but {vectors} vectors")]
    LengthMismatch { texts: usize, vectors: usize },
    #[error("vector {index} has dim {found}, expected {expected}")]
    RaggedDim { index: usize, expected: usize, found: usize },
    #[error(transparent)]
    Index(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    text: String,
    offset: u64,
}

/// Text to vector map backed by an index file and a vectors file. Lookup is by
/// exact string equality.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorCache {
    dim: usize,
    rows: Vec<f32>,
    index: HashMap<String, usize>,
}

impl VectorCache {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn count(&self) -> usize {
        self.rows.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn get(&self, text: &str) -> Option<&[f32]> {
        self.index
            .get(text)
            .map(|&row| &self.rows[row * self.dim..(row + 1) * self.dim])
    }

    /// Writes `texts[i] -> vectors[i]`. Rows are stored in input order.
    pub fn write(
        texts: &[String],
        vectors: &[EmbeddingVector],
        index_path: &Path,
        vectors_path: &Path,
    ) -> Result<(), CacheError> {
        if texts.len() != vectors.len() {
            return Err(CacheError::LengthMismatch {
                texts: texts.len(),
                vectors: vectors.len(),
            });
        }
        let dim = vectors.first().map_or(0, EmbeddingVector::dim);
        if let Some((index, v)) = vectors.iter().enumerate().find(|(_, v)| v.dim() != dim) {
            return Err(CacheError::RaggedDim {
                index,
                expected: dim,
                found: v.dim(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(t) = texts.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(CacheError::DuplicateText(t.clone()));
        }

        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CacheError::Io { path, source }
        };
        if let Some(parent) = vectors_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io(vectors_path))?;
        }
        let mut w = BufWriter::new(File::create(vectors_path).map_err(io(vectors_path))?);
        let mut header = Vec::with_capacity(VECTORS_HEADER);
        header.extend_from_slice(VECTORS_MAGIC);
        header.extend_from_slice(&VECTORS_VERSION.to_le_bytes());
        header.extend_from_slice(&(dim as u32).to_le_bytes());
        header.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
        w.write_all(&header).map_err(io(vectors_path))?;
        for v in vectors {
            for &x in v.values() {
                w.write_all(&(x as f32).to_le_bytes()).map_err(io(vectors_path))?;
            }
        }
        w.flush().map_err(io(vectors_path))?;

        let entries: Vec<IndexEntry> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| IndexEntry {
                text: t.clone(),
                offset: i as u64,
            })
            .collect();
        write_jsonl(index_path, &entries)?;
        Ok(())
    }

    pub fn read(index_path: &Path, vectors_path: &Path) -> Result<Self, CacheError> {
        let mut bytes = Vec::new();
        File::open(vectors_path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| CacheError::Io {
                path: vectors_path.to_path_buf(),
                source,
            })?;
        let path = vectors_path.to_path_buf();
        let actual = bytes.len() as u64;
        if bytes.len() < VECTORS_HEADER {
            if bytes.len() < 4 || &bytes[..4] == VECTORS_MAGIC {
                return Err(CacheError::Truncated {
                    path,
                    expected: VECTORS_HEADER as u64,
                    actual,
                });
            }
            return Err(CacheError::BadMagic(path));
        }
        if &bytes[..4] != VECTORS_MAGIC {
            return Err(CacheError::BadMagic(path));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VECTORS_VERSION {
            return Err(CacheError::UnsupportedVersion { path, version });
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let expected = VECTORS_HEADER as u64 + count * dim as u64 * 4;
        if actual < expected {
            return Err(CacheError::Truncated { path, expected, actual });
        }
        if actual > expected {
            return Err(CacheError::TrailingBytes { path, expected, actual });
        }
        let rows: Vec<f32> = bytes[VECTORS_HEADER..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let mut index = HashMap::new();
        let entries = read_jsonl_with(index_path, |e: IndexEntry, _| Ok(e))?;
        for e in entries {
            if e.offset >= count {
                return Err(CacheError::OffsetOutOfRange {
                    text: e.text,
                    offset: e.offset,
                    count,
                });
            }
            if index.insert(e.text.clone(), e.offset as usize).is_some() {
                return Err(CacheError::DuplicateText(e.text));
            }
        }
        Ok(VectorCache { dim, rows, index })
    }
}

impl Embedder for VectorCache {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        texts
            .iter()
            .map(|t| {
                let row = self.get(t).ok_or_else(|| EmbedError::CacheMiss(t.clone()))?;
                Ok(EmbeddingVector::from_f32(row)?)
            })
            .collect()
    }

    fn fingerprint(&self) -> String {
        format!("file_cache(dim={},count={})", self.dim, self.count())
    }
}

/// Answers from the cache where possible and sends only the misses to
/// `fallback`.
pub struct CacheFirst<'a> {
    pub cache: &'a VectorCache,
    pub fallback: &'a dyn Embedder,
}

impl Embedder for CacheFirst<'_> {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let misses: Vec<String> = texts.iter().filter(|t| self.cache.get(t).is_none()).cloned().collect();
        let mut fetched = if misses.is_empty() {
            Vec::new()
        } else {
            self.fallback.embed_batch(&misses)?
        }
        .into_iter();
        texts
            .iter()
            .map(|t| match self.cache.get(t) {
                Some(row) => Ok(EmbeddingVector::from_f32(row)?),
                None => fetched
                    .next()
                    .ok_or_else(|| EmbedError::Malformed("fallback returned too few vectors".into())),
            })
            .collect()
    }

    fn fingerprint(&self) -> String {
        format!("cache_first({},{})", self.cache.fingerprint(), self.fallback.fingerprint())
    }
}

pub struct RemoteEmbedder {
    url: String,
    model: String,
    batch_size: usize,
    client: JsonClient,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    #[allow(dead_code)]
    model: String,
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
    pub dim: usize,
}

impl RemoteEmbedder {
    /// Client with the default retry policy, no rate limit and the system clock.
    pub fn connect(url: &str, model: &str, batch_size: usize, timeout: Duration) -> Self {
        RemoteEmbedder {
            url: url.to_string(),
            model: model.to_string(),
            batch_size: batch_size.max(1),
            client: JsonClient::new(timeout, RetryPolicy::default(), None, Arc::new(SystemClock::default())),
        }
    }

    pub fn health(&self) -> Result<Health, EmbedError> {
        let resp = self.client.get_json(&join_url(&self.url, "/health"))?;
        serde_json::from_value(resp.body).map_err(|e| EmbedError::Malformed(e.to_string()))
    }
}

impl Embedder for RemoteEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let url = join_url(&self.url, "/embed");
        let mut out = Vec::with_capacity(texts.len());
        let mut dim: Option<usize> = None;
        for chunk in texts.chunks(self.batch_size) {
            let body = json!({ "model": self.model, "texts": chunk });
            let resp = self.client.post_json(&url, &[], &body)?;
            let parsed: EmbedResponse =
                serde_json::from_value(resp.body).map_err(|e| EmbedError::Malformed(e.to_string()))?;
            if parsed.vectors.len() != chunk.len() {
                return Err(EmbedError::Malformed(format!(
                    "sent {} texts, got {} vectors",
                    chunk.len(),
                    parsed.vectors.len()
                )));
            }
            let expected = *dim.get_or_insert(parsed.dim);
            if parsed.dim != expected {
                return Err(EmbedError::DimMismatch {
                    expected,
                    found: parsed.dim,
                });
            }
            for v in parsed.vectors {
                if v.len() != expected {
                    return Err(EmbedError::DimMismatch {
                        expected,
                        found: v.len(),
                    });
                }
                out.push(EmbeddingVector::new(v)?);
            }
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        format!("remote(url={},model={})", self.url, self.model)
    }
}
