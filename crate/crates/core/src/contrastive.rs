//! Multiple negatives ranking loss over cosine similarities, its analytic
//! gradient through a linear adapter, and an Adam trainer for the adapter.
//!
//! For anchor `q_i` the candidates are its positive `p_i` and its negative
//! `n_i`; with in-batch negatives every other positive and negative in the
//! batch joins the denominator as well:
//!
//! ```text
//! loss_i = -log( exp(s * sim(q_i, p_i)) / sum_c exp(s * sim(q_i, c)) )
//! ```
//!
//! and the batch loss is the mean of `loss_i`. The adapter maps a frozen base
//! embedding `e` to `normalize(W e + b)`.
//!
//! Reductions over the batch use a fixed summation order so results do not
//! depend on the rayon thread count.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContrastiveError {
    #[error("empty embedding vector")]
    EmptyVector,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("batch must hold at least one triple")]
    EmptyBatch,
    #[error("batch lists differ in length: {anchors} anchors, {positives} positives, {negatives} negatives")]
    RaggedBatch {
        anchors: usize,
        positives: usize,
        negatives: usize,
    },
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("adapter output for {role} #{index} has zero norm")]
    ZeroNormOutput { role: &'static str, index: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
}

/// Dense embedding with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ContrastiveError> {
        if values.is_empty() {
            return Err(ContrastiveError::EmptyVector);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ContrastiveError::NonFinite(i));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, ContrastiveError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Result<Self, ContrastiveError> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }

    pub fn normalized(&self) -> Result<Self, ContrastiveError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(ContrastiveError::ZeroVector);
        }
        Self::new(self.0.iter().map(|v| v / n).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = ContrastiveError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise summation with a split point that depends only on the length.
pub fn tree_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (l, r) = xs.split_at(n / 2);
            tree_sum(l) + tree_sum(r)
        }
    }
}

/// `u . v / (|u| |v|)`, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, ContrastiveError> {
    if u.dim() != v.dim() {
        return Err(ContrastiveError::DimMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(ContrastiveError::ZeroVector);
    }
    Ok((dot(&u.0, &v.0) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Anchors with their positive and negative, position-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleBatch {
    anchors: Vec<EmbeddingVector>,
    positives: Vec<EmbeddingVector>,
    negatives: Vec<EmbeddingVector>,
}

impl TripleBatch {
    pub fn new(
        anchors: Vec<EmbeddingVector>,
        positives: Vec<EmbeddingVector>,
        negatives: Vec<EmbeddingVector>,
    ) -> Result<Self, ContrastiveError> {
        if anchors.len() != positives.len() || anchors.len() != negatives.len() {
            return Err(ContrastiveError::RaggedBatch {
                anchors: anchors.len(),
                positives: positives.len(),
                negatives: negatives.len(),
            });
        }
        if anchors.is_empty() {
            return Err(ContrastiveError::EmptyBatch);
        }
        let dim = anchors[0].dim();
        for v in anchors.iter().chain(&positives).chain(&negatives) {
            if v.dim() != dim {
                return Err(ContrastiveError::DimMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
        }
        Ok(TripleBatch {
            anchors,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].dim()
    }

    pub fn anchors(&self) -> &[EmbeddingVector] {
        &self.anchors
    }

    pub fn positives(&self) -> &[EmbeddingVector] {
        &self.positives
    }

    pub fn negatives(&self) -> &[EmbeddingVector] {
        &self.negatives
    }

    /// Sub-batch with the triples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, ContrastiveError> {
        let pick = |v: &[EmbeddingVector]| indices.iter().map(|&i| v[i].clone()).collect();
        TripleBatch::new(pick(&self.anchors), pick(&self.positives), pick(&self.negatives))
    }

    pub fn map(&self, f: impl Fn(&EmbeddingVector) -> Result<EmbeddingVector, ContrastiveError>) -> Result<Self, ContrastiveError> {
        let m = |v: &[EmbeddingVector]| v.iter().map(&f).collect::<Result<Vec<_>, _>>();
        TripleBatch::new(m(&self.anchors)?, m(&self.positives)?, m(&self.negatives)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Multiplier applied to similarities before the softmax.
    pub scale: f64,
    /// Add all other positives and negatives of the batch to each denominator.
    pub in_batch_negatives: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            scale: 1.0,
            in_batch_negatives: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ContrastiveError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(ContrastiveError::InvalidConfig(format!("scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Unit vectors for all three roles of a batch.
struct UnitBatch {
    q: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
}

impl UnitBatch {
    fn from_batch(batch: &TripleBatch) -> Result<Self, ContrastiveError> {
        let unit = |v: &[EmbeddingVector]| {
            v.iter()
                .map(|e| e.normalized().map(EmbeddingVector::into_inner))
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(UnitBatch {
            q: unit(&batch.anchors)?,
            p: unit(&batch.positives)?,
            n: unit(&batch.negatives)?,
        })
    }

    /// Candidate set of row `i`: (role, index) pairs, the positive first.
    fn candidates(&self, i: usize, in_batch: bool) -> Vec<(Role, usize)> {
        if in_batch {
            let b = self.q.len();
            let mut c = Vec::with_capacity(2 * b);
            c.push((Role::Positive, i));
            c.extend((0..b).filter(|&j| j != i).map(|j| (Role::Positive, j)));
            c.extend((0..b).map(|j| (Role::Negative, j)));
            c
        } else {
            vec![(Role::Positive, i), (Role::Negative, i)]
        }
    }

    fn get(&self, role: Role, i: usize) -> &[f64] {
        match role {
            Role::Anchor => &self.q[i],
            Role::Positive => &self.p[i],
            Role::Negative => &self.n[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Anchor,
    Positive,
    Negative,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::Anchor => "anchor",
            Role::Positive => "positive",
            Role::Negative => "negative",
        }
    }
}

type RowSoftmax = (f64, Vec<(Role, usize, f64)>);

/// Per-row loss and the softmax weights `d loss_i / d logit_c` over the row's
/// candidates (positive first).
fn row_softmax(u: &UnitBatch, i: usize, cfg: &LossConfig) -> RowSoftmax {
    let cands = u.candidates(i, cfg.in_batch_negatives);
    let logits: Vec<f64> = cands
        .iter()
        .map(|&(r, j)| cfg.scale * dot(&u.q[i], u.get(r, j)).clamp(-1.0, 1.0))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z = tree_sum(&exps);
    let loss = max + z.ln() - logits[0];
    let weights = cands
        .iter()
        .zip(&exps)
        .enumerate()
        .map(|(k, (&(r, j), e))| (r, j, e / z - if k == 0 { 1.0 } else { 0.0 }))
        .collect();
    (loss, weights)
}

fn mean_loss(u: &UnitBatch, cfg: &LossConfig) -> f64 {
    let rows: Vec<f64> = (0..u.q.len()).into_par_iter().map(|i| row_softmax(u, i, cfg).0).collect();
    tree_sum(&rows) / rows.len() as f64
}

/// Mean MNRL over the batch; vectors are compared by cosine similarity.
pub fn mnrl_loss(batch: &TripleBatch, config: &LossConfig) -> Result<f64, ContrastiveError> {
    config.validate()?;
    Ok(mean_loss(&UnitBatch::from_batch(batch)?, config))
}

/// Linear map `e -> normalize(W e + b)` over frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    dim: usize,
    /// Row-major `dim x dim`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl AdapterParams {
    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        AdapterParams {
            dim,
            w,
            b: vec![0.0; dim],
        }
    }

    pub fn new(dim: usize, w: Vec<f64>, b: Vec<f64>) -> Result<Self, ContrastiveError> {
        if w.len() != dim * dim {
            return Err(ContrastiveError::DimMismatch {
                expected: dim * dim,
                found: w.len(),
            });
        }
        if b.len() != dim {
            return Err(ContrastiveError::DimMismatch {
                expected: dim,
                found: b.len(),
            });
        }
        if let Some(i) = w.iter().chain(&b).position(|v| !v.is_finite()) {
            return Err(ContrastiveError::NonFinite(i));
        }
        Ok(AdapterParams { dim, w, b })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    fn affine(&self, e: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| dot(&self.w[r * self.dim..(r + 1) * self.dim], e) + self.b[r])
            .collect()
    }

    /// Encodes into the binary adapter format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * (self.w.len() + self.b.len()));
        out.extend_from_slice(ADAPTER_MAGIC);
        out.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in self.w.iter().chain(&self.b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AdapterFileError> {
        if bytes.len() < 12 {
            return Err(AdapterFileError::Truncated {
                expected: 12,
                actual: bytes.len(),
            });
        }
        if &bytes[..4] != ADAPTER_MAGIC {
            return Err(AdapterFileError::BadMagic(bytes[..4].to_vec()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != ADAPTER_VERSION {
            return Err(AdapterFileError::UnsupportedVersion(version));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + 8 * (dim * dim + dim);
        if bytes.len() < expected {
            return Err(AdapterFileError::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(AdapterFileError::TrailingBytes {
                expected,
                actual: bytes.len(),
            });
        }
        let vals: Vec<f64> = bytes[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (w, b) = vals.split_at(dim * dim);
        AdapterParams::new(dim, w.to_vec(), b.to_vec()).map_err(AdapterFileError::Invalid)
    }

    pub fn save(&self, path: &Path) -> Result<(), AdapterFileError> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AdapterFileError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub const ADAPTER_MAGIC: &[u8; 4] = b"HADP";
pub const ADAPTER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AdapterFileError {
    #[error("not an adapter file (magic {0:?})")]
    BadMagic(Vec<u8>),
    #[error("unsupported adapter file version {0}")]
    UnsupportedVersion(u32),
    #[error("adapter file truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("adapter file has trailing bytes: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("adapter file holds invalid parameters: {0}")]
    Invalid(ContrastiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `normalize(W v + b)`.
pub fn apply_adapter(params: &AdapterParams, v: &EmbeddingVector) -> Result<EmbeddingVector, ContrastiveError> {
    if v.dim() != params.dim {
        return Err(ContrastiveError::DimMismatch {
            expected: params.dim,
            found: v.dim(),
        });
    }
    EmbeddingVector::new(params.affine(v.values()))?.normalized()
}

/// Loss of the batch after mapping every vector through the adapter.
pub fn mnrl_loss_with_adapter(
    batch: &TripleBatch,
    config: &LossConfig,
    params: &AdapterParams,
) -> Result<f64, ContrastiveError> {
    config.validate()?;
    let (u, _) = adapted(batch, params)?;
    Ok(mean_loss(&u, config))
}

/// Adapter outputs (unit) and the pre-normalization norms, by role.
fn adapted(batch: &TripleBatch, params: &AdapterParams) -> Result<(UnitBatch, [Vec<f64>; 3]), ContrastiveError> {
    if batch.dim() != params.dim {
        return Err(ContrastiveError::DimMismatch {
            expected: params.dim,
            found: batch.dim(),
        });
    }
    let run = |vs: &[EmbeddingVector], role: Role| -> Result<(Vec<Vec<f64>>, Vec<f64>), ContrastiveError> {
        let mut units = Vec::with_capacity(vs.len());
        let mut norms = Vec::with_capacity(vs.len());
        for (index, e) in vs.iter().enumerate() {
            let z = params.affine(e.values());
            let n = dot(&z, &z).sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(ContrastiveError::ZeroNormOutput { role: role.name(), index });
            }
            units.push(z.iter().map(|v| v / n).collect());
            norms.push(n);
        }
        Ok((units, norms))
    };
    let (q, nq) = run(&batch.anchors, Role::Anchor)?;
    let (p, np) = run(&batch.positives, Role::Positive)?;
    let (n, nn) = run(&batch.negatives, Role::Negative)?;
    Ok((UnitBatch { q, p, n }, [nq, np, nn]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// Row-major `dim x dim`, matching [`AdapterParams::weights`].
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Loss and exact gradient with respect to the adapter's `W` and `b`.
pub fn mnrl_gradients(
    batch: &TripleBatch,
    config: &LossConfig,
    params: &AdapterParams,
) -> Result<Gradients, ContrastiveError> {
    config.validate()?;
    let dim = params.dim;
    let bsz = batch.len();
    let (u, norms) = adapted(batch, params)?;
    let inv_b = 1.0 / bsz as f64;

    let rows: Vec<RowSoftmax> =
        (0..bsz).into_par_iter().map(|i| row_softmax(&u, i, config)).collect();
    let losses: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let loss = tree_sum(&losses) * inv_b;

    // d loss / d sim(q_i, c) for every (row, candidate) pair
    let coeff = config.scale * inv_b;
    let mut by_candidate: [Vec<Vec<(usize, f64)>>; 2] = [vec![Vec::new(); bsz], vec![Vec::new(); bsz]];
    for (i, (_, weights)) in rows.iter().enumerate() {
        for &(role, j, g) in weights {
            let slot = if role == Role::Positive { 0 } else { 1 };
            by_candidate[slot][j].push((i, g * coeff));
        }
    }

    // gradient w.r.t. each unit vector, one task per output in fixed order
    let du_q: Vec<Vec<f64>> = (0..bsz)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; dim];
            for &(role, j, g) in &rows[i].1 {
                let c = u.get(role, j);
                for (a, x) in acc.iter_mut().zip(c) {
                    *a += g * coeff * x;
                }
            }
            acc
        })
        .collect();
    let du_cand = |slot: usize| -> Vec<Vec<f64>> {
        (0..bsz)
            .into_par_iter()
            .map(|j| {
                let mut acc = vec![0.0; dim];
                for &(i, g) in &by_candidate[slot][j] {
                    for (a, x) in acc.iter_mut().zip(&u.q[i]) {
                        *a += g * x;
                    }
                }
                acc
            })
            .collect()
    };
    let du_p = du_cand(0);
    let du_n = du_cand(1);

    // back through normalization: dz = (du - u (u . du)) / |z|
    let mut dz: Vec<(Vec<f64>, &[f64])> = Vec::with_capacity(3 * bsz);
    let groups = [
        (&du_q, &u.q, &norms[0], batch.anchors()),
        (&du_p, &u.p, &norms[1], batch.positives()),
        (&du_n, &u.n, &norms[2], batch.negatives()),
    ];
    for (du, units, ns, embs) in groups {
        for k in 0..bsz {
            let proj = dot(&units[k], &du[k]);
            let g: Vec<f64> = du[k]
                .iter()
                .zip(&units[k])
                .map(|(d, uu)| (d - uu * proj) / ns[k])
                .collect();
            dz.push((g, embs[k].values()));
        }
    }

    let w: Vec<f64> = (0..dim * dim)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / dim, idx % dim);
            let terms: Vec<f64> = dz.iter().map(|(g, e)| g[r] * e[c]).collect();
            tree_sum(&terms)
        })
        .collect();
    let b: Vec<f64> = (0..dim)
        .map(|r| {
            let terms: Vec<f64> = dz.iter().map(|(g, _)| g[r]).collect();
            tree_sum(&terms)
        })
        .collect();
    Ok(Gradients { loss, w, b })
}

/// Mean `sim(a, p) - sim(a, n)` after the adapter.
pub fn mean_margin(batch: &TripleBatch, params: &AdapterParams) -> Result<f64, ContrastiveError> {
    let (u, _) = adapted(batch, params)?;
    let margins: Vec<f64> = (0..batch.len())
        .map(|i| dot(&u.q[i], &u.p[i]).clamp(-1.0, 1.0) - dot(&u.q[i], &u.n[i]).clamp(-1.0, 1.0))
        .collect();
    Ok(tree_sum(&margins) / margins.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            loss: LossConfig::default(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ContrastiveError> {
        self.loss.validate()?;
        let bad = |m: String| Err(ContrastiveError::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and epsilon must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: AdapterParams,
    /// Evaluation loss before the first update.
    pub initial_loss: f64,
    /// Evaluation loss after each epoch. Evaluation uses fixed, unshuffled
    /// chunks of `batch_size`, so the trace is flat when the parameters do not move.
    pub epoch_losses: Vec<f64>,
    /// Mean mini-batch loss seen during each epoch.
    pub epoch_train_losses: Vec<f64>,
    pub initial_margin: f64,
    pub final_margin: f64,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Mean loss over consecutive chunks of `batch_size` triples.
pub fn evaluate_loss(
    data: &TripleBatch,
    params: &AdapterParams,
    config: &LossConfig,
    batch_size: usize,
) -> Result<f64, ContrastiveError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let losses = idx
        .chunks(batch_size.max(1))
        .map(|c| mnrl_loss_with_adapter(&data.select(c)?, config, params))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(tree_sum(&losses) / losses.len() as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for k in 0..theta.len() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * grad[k];
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            theta[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains an adapter from identity with mini-batch Adam, reshuffling every
/// epoch from a generator seeded with `config.seed`.
pub fn train_adapter(data: &TripleBatch, config: &TrainConfig) -> Result<TrainReport, ContrastiveError> {
    config.validate()?;
    let dim = data.dim();
    let mut params = AdapterParams::identity(dim);
    let mut adam_w = Adam::new(dim * dim);
    let mut adam_b = Adam::new(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let initial_loss = evaluate_loss(data, &params, &config.loss, config.batch_size)?;
    let initial_margin = mean_margin(data, &params)?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_train_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut seen = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk)?;
            let g = mnrl_gradients(&batch, &config.loss, &params)?;
            if !g.loss.is_finite() || g.w.iter().chain(&g.b).any(|v| !v.is_finite()) {
                tracing::error!(epoch, step = steps, loss = g.loss, "non-finite loss or gradient");
                return Err(ContrastiveError::Diverged {
                    epoch,
                    step: steps,
                    loss: g.loss,
                });
            }
            adam_w.step(&mut params.w, &g.w, config);
            adam_b.step(&mut params.b, &g.b, config);
            seen.push(g.loss);
            steps += 1;
        }
        let eval = evaluate_loss(data, &params, &config.loss, config.batch_size).map_err(|e| match e {
            ContrastiveError::ZeroNormOutput { .. } => ContrastiveError::Diverged {
                epoch,
                step: steps,
                loss: f64::NAN,
            },
            other => other,
        })?;
        if !eval.is_finite() {
            return Err(ContrastiveError::Diverged {
                epoch,
                step: steps,
                loss: eval,
            });
        }
        tracing::debug!(epoch, loss = eval, "epoch done");
        epoch_losses.push(eval);
        epoch_train_losses.push(tree_sum(&seen) / seen.len().max(1) as f64);
    }

    let final_margin = mean_margin(data, &params)?;
    Ok(TrainReport {
        params,
        initial_loss,
        epoch_losses,
        epoch_train_losses,
        initial_margin,
        final_margin,
        steps,
    })
}
