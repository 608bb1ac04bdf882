//! Shared vector types and the exact full-cache attention oracle.
//!
//! Everything in this module is a pure function of its inputs and serves as
//! ground truth for the compressed caches elsewhere in the crate.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative residual at which power iteration stops.
pub const OPNORM_TOL: f64 = 1e-8;
/// Hard cap on power iterations.
pub const OPNORM_MAX_ITERS: usize = 10_000;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn check_dim(expected: usize, v: &[f64]) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// One stream element: query, key and value of the same dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTriplet {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

impl TokenTriplet {
    pub fn new(q: Vec<f64>, k: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let token = TokenTriplet { q, k, v };
        token.validate()?;
        Ok(token)
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.k.len();
        if d == 0 {
            return Err(Error::invalid("token dimension must be at least 1"));
        }
        check_dim(d, &self.q)?;
        check_dim(d, &self.v)?;
        check_finite("query", &self.q)?;
        check_finite("key", &self.k)?;
        check_finite("value", &self.v)
    }
}

/// The uncompressed KV cache: rows of the stacked key and value matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExactCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    d: usize,
}

impl ExactCache {
    pub fn new(d: usize) -> Self {
        ExactCache {
            keys: Vec::new(),
            values: Vec::new(),
            d,
        }
    }

    pub fn from_rows(keys: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> Result<Self> {
        if keys.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} keys but {} values",
                keys.len(),
                values.len()
            )));
        }
        let d = keys.first().map_or(0, Vec::len);
        let mut cache = ExactCache::new(d);
        for (k, v) in keys.into_iter().zip(values) {
            cache.push(k, v)?;
        }
        Ok(cache)
    }

    pub fn push(&mut self, k: Vec<f64>, v: Vec<f64>) -> Result<()> {
        if self.keys.is_empty() && self.d == 0 {
            self.d = k.len();
        }
        check_dim(self.d, &k)?;
        check_dim(self.d, &v)?;
        self.keys.push(k);
        self.values.push(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn keys(&self) -> &[Vec<f64>] {
        &self.keys
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Cache restricted to the given (0-based) rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> ExactCache {
        ExactCache {
            keys: rows.iter().map(|&i| self.keys[i].clone()).collect(),
            values: rows.iter().map(|&i| self.values[i].clone()).collect(),
            d: self.d,
        }
    }

    /// First `n` rows.
    pub fn prefix(&self, n: usize) -> ExactCache {
        ExactCache {
            keys: self.keys[..n].to_vec(),
            values: self.values[..n].to_vec(),
            d: self.d,
        }
    }
}

/// An attention output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnVector(pub Vec<f64>);

impl AttnVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_query(cache: &ExactCache, q: &[f64]) -> Result<()> {
    if cache.is_empty() {
        return Err(Error::NoTokens);
    }
    check_dim(cache.dim(), q)?;
    check_finite("query", q)
}

/// Softmax of a logit vector with max-logit subtraction.
pub(crate) fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

/// Exact softmax weights `softmax(K q)`, one per cached token.
pub fn softmax_vector(cache: &ExactCache, q: &[f64]) -> Result<Vec<f64>> {
    check_query(cache, q)?;
    let logits: Vec<f64> = cache.keys().iter().map(|k| dot(k, q)).collect();
    Ok(stable_softmax(&logits))
}

/// Exact attention `softmax(K q)^T V` over the whole cache.
pub fn exact_attention(cache: &ExactCache, q: &[f64]) -> Result<AttnVector> {
    let weights = softmax_vector(cache, q)?;
    let mut z = vec![0.0; cache.dim()];
    for (w, v) in weights.iter().zip(cache.values()) {
        for (zj, vj) in z.iter_mut().zip(v) {
            *zj += w * vj;
        }
    }
    Ok(AttnVector(z))
}

/// Largest singular value of the matrix whose rows are `rows`.
///
/// Power iteration on the Gram matrix `V^T V` (or `V V^T` when there are
/// fewer rows than columns) from the normalized all-ones vector, stopped once
/// the eigen-residual drops below [`OPNORM_TOL`] relative to the eigenvalue
/// estimate or after [`OPNORM_MAX_ITERS`] rounds.
pub fn operator_norm(rows: &[Vec<f64>]) -> Result<f64> {
    let d = match rows.first() {
        Some(r) => r.len(),
        None => return Err(Error::invalid("operator norm of an empty matrix")),
    };
    for r in rows {
        check_dim(d, r)?;
    }
    let gram = if d <= rows.len() {
        let mut g = vec![vec![0.0; d]; d];
        for r in rows {
            for (i, gi) in g.iter_mut().enumerate() {
                for (j, gij) in gi.iter_mut().enumerate() {
                    *gij += r[i] * r[j];
                }
            }
        }
        g
    } else {
        rows.iter()
            .map(|a| rows.iter().map(|b| dot(a, b)).collect())
            .collect()
    };
    Ok(top_eigenvalue_psd(&gram).max(0.0).sqrt())
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
fn top_eigenvalue_psd(g: &[Vec<f64>]) -> f64 {
    let dim = g.len();
    let apply = |x: &[f64]| -> Vec<f64> { g.iter().map(|row| dot(row, x)).collect() };
    if g.iter().all(|row| row.iter().all(|&x| x == 0.0)) {
        return 0.0;
    }

    let mut x = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut y = apply(&x);
    if norm(&y) == 0.0 {
        // Start vector is in the null space; restart from the heaviest diagonal entry.
        let heaviest = (0..dim)
            .max_by(|&a, &b| g[a][a].total_cmp(&g[b][b]))
            .unwrap_or(0);
        x = vec![0.0; dim];
        x[heaviest] = 1.0;
        y = apply(&x);
    }

    let mut lambda = dot(&x, &y);
    for _ in 0..OPNORM_MAX_ITERS {
        let ny = norm(&y);
        x = y.iter().map(|v| v / ny).collect();
        y = apply(&x);
        lambda = dot(&x, &y);
        let residual = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= OPNORM_TOL * lambda.abs() {
            break;
        }
    }
    lambda
}

/// Exact output and error denominator for one `(cache, q)` pair, so several
/// estimates can be scored without recomputing either.
#[derive(Debug, Clone)]
pub struct ErrorScale {
    exact: AttnVector,
    denom: f64,
}

impl ErrorScale {
    pub fn new(cache: &ExactCache, q: &[f64]) -> Result<Self> {
        let weights = softmax_vector(cache, q)?;
        let mut z = vec![0.0; cache.dim()];
        for (w, v) in weights.iter().zip(cache.values()) {
            for (zj, vj) in z.iter_mut().zip(v) {
                *zj += w * vj;
            }
        }
        Ok(ErrorScale {
            exact: AttnVector(z),
            denom: norm(&weights) * operator_norm(cache.values())?,
        })
    }

    pub fn exact(&self) -> &AttnVector {
        &self.exact
    }

    /// `‖softmax(Kq)‖₂ · ‖V‖_op`.
    pub fn denominator(&self) -> f64 {
        self.denom
    }

    pub fn error(&self, z_approx: &AttnVector) -> Result<f64> {
        check_dim(self.exact.0.len(), z_approx.as_slice())?;
        let diff = dist(z_approx.as_slice(), self.exact.as_slice());
        if self.denom == 0.0 {
            return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
        }
        Ok(diff / self.denom)
    }
}

/// Normalized error `‖z − Attn‖₂ / (‖softmax(Kq)‖₂ · ‖V‖_op)`.
///
/// When every value row is zero the denominator vanishes; the error is then
/// 0 for an exact (zero) estimate and `+inf` otherwise.
pub fn spectral_error(z_approx: &AttnVector, cache: &ExactCache, q: &[f64]) -> Result<f64> {
    ErrorScale::new(cache, q)?.error(z_approx)
}
