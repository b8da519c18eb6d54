//! Independent reference implementations used to check the library.

use std::collections::HashMap;

use negkit::contrastive::{mnrl_gradients, mnrl_loss_with_adapter, AdapterParams, EmbeddingVector, LossConfig, TripleBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook recursive edit distance with memoization over char indices.
pub fn edit_distance(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), d);
        d
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    go(&a, &b, 0, 0, &mut HashMap::new())
}

/// Rank of each value counting smaller and equal neighbours directly.
pub fn quadratic_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = quadratic_ranks(x);
    let ry = quadratic_ranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mean) * (b - mean)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - mean).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, dim: usize, len: usize) -> TripleBatch {
    let role = |rng: &mut ChaCha8Rng| (0..len).map(|_| random_vector(rng, dim)).collect::<Vec<_>>();
    let (a, p, n) = (role(rng), role(rng), role(rng));
    TripleBatch::new(a, p, n).unwrap()
}

/// Identity plus a small random perturbation.
pub fn random_adapter(rng: &mut ChaCha8Rng, dim: usize) -> AdapterParams {
    let mut w = AdapterParams::identity(dim).weights().to_vec();
    for v in &mut w {
        *v += rng.random_range(-0.3..0.3);
    }
    let b = (0..dim).map(|_| rng.random_range(-0.2..0.2)).collect();
    AdapterParams::new(dim, w, b).unwrap()
}

/// Largest relative disagreement between analytic gradients and central
/// differences over every entry of `W` and `b`.
pub fn max_gradient_error(batch: &TripleBatch, config: &LossConfig, params: &AdapterParams, eps: f64) -> f64 {
    let dim = params.dim();
    let analytic = mnrl_gradients(batch, config, params).unwrap();
    let loss_at = |w: &[f64], b: &[f64]| {
        let p = AdapterParams::new(dim, w.to_vec(), b.to_vec()).unwrap();
        mnrl_loss_with_adapter(batch, config, &p).unwrap()
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    let (w0, b0) = (params.weights().to_vec(), params.bias().to_vec());
    for k in 0..w0.len() {
        let (mut hi, mut lo) = (w0.clone(), w0.clone());
        hi[k] += eps;
        lo[k] -= eps;
        let numeric = (loss_at(&hi, &b0) - loss_at(&lo, &b0)) / (2.0 * eps);
        worst = worst.max(rel(analytic.w[k], numeric));
    }
    for k in 0..b0.len() {
        let (mut hi, mut lo) = (b0.clone(), b0.clone());
        hi[k] += eps;
        lo[k] -= eps;
        let numeric = (loss_at(&w0, &hi) - loss_at(&w0, &lo)) / (2.0 * eps);
        worst = worst.max(rel(analytic.b[k], numeric));
    }
    worst
}

/// Triples whose anchor and positive share a polarity component `+gamma` on
/// the first axis while the negative carries `-gamma`; all three share the
/// same content on the remaining axes, so the negative starts out close.
pub fn planted_fixture(seed: u64, len: usize, dim: usize, gamma: f64) -> TripleBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut p, mut n) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..len {
        let content: Vec<f64> = (1..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let with = |pol: f64, noise: f64, rng: &mut ChaCha8Rng| {
            let mut v = vec![pol];
            v.extend(content.iter().map(|c| c + noise * rng.random_range(-1.0..1.0)));
            EmbeddingVector::new(v).unwrap()
        };
        a.push(with(gamma, 0.0, &mut rng));
        p.push(with(gamma, 0.05, &mut rng));
        n.push(with(-gamma, 0.0, &mut rng));
    }
    TripleBatch::new(a, p, n).unwrap()
}
