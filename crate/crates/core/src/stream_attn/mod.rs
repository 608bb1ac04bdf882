//! The SubGen streaming attention estimator.
//!
//! Two sketches are maintained side by side while tokens arrive:
//!
//! * [`NormalizerDs`] clusters keys online with a fixed admission radius
//!   `delta`. Each cluster keeps its first key as center, a count, and `t`
//!   independent size-1 reservoirs that hold uniform samples of the keys
//!   admitted to it. The softmax normalizer is estimated per cluster as
//!   `count / t * Σ exp(<q, sample>)`.
//! * [`ValueSampler`] keeps `s` independent `(key, value)` slots, each a
//!   sample drawn with probability proportional to `‖v‖²`, plus the running
//!   mass `mu = Σ ‖v‖²`. The attention numerator is the importance-weighted
//!   average `Σ mu / (s ‖v‖²) · exp(<q, k>) · v`.
//!
//! With keys coverable by `m` clusters, memory stays `O(d (m t + s))` no
//! matter how long the stream gets.

mod snapshot;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attn::{check_dim, dist, dot, norm_sq, AttnVector, TokenTriplet};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

/// Largest `delta * r` accepted by [`derive_sizes`]; `e^(2 δ r)` overflows soon after.
pub const MAX_DELTA_R: f64 = 300.0;

/// Target accuracy and the stream regime it is certified for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyParams {
    /// Target normalized error, in `(0, 1]`.
    pub epsilon: f64,
    /// Bound on query norms.
    pub r: f64,
    /// Cluster admission radius.
    pub delta: f64,
    /// Expected maximum stream length.
    pub n_max: f64,
}

impl AccuracyParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite and > 0, got {x}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("r", self.r)?;
        positive("delta", self.delta)?;
        positive("n_max", self.n_max)?;
        if self.epsilon > 1.0 {
            return Err(Error::invalid(format!(
                "epsilon must be at most 1, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Multipliers applied to the asymptotic reservoir and sampler sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeConstants {
    pub c_t: f64,
    pub c_s: f64,
}

impl Default for SizeConstants {
    fn default() -> Self {
        SizeConstants { c_t: 1.0, c_s: 1.0 }
    }
}

/// Reservoir size `t` and sampler size `s` for the requested accuracy.
///
/// `t = ⌈c_t ε⁻² e^(2δr) ln max(n_max, 2)⌉`, capped at `⌊n_max⌋`, and
/// `s = ⌈c_s ε⁻² d⌉`. Both are at least 1.
pub fn derive_sizes(
    params: &AccuracyParams,
    d: usize,
    constants: SizeConstants,
) -> Result<(usize, usize)> {
    params.validate()?;
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let spread = params.delta * params.r;
    if spread > MAX_DELTA_R {
        return Err(Error::ClusterabilityRegime(spread));
    }
    let inv_eps_sq = params.epsilon.powi(-2);
    let t = (constants.c_t * inv_eps_sq * (2.0 * spread).exp() * params.n_max.max(2.0).ln()).ceil();
    let s = (constants.c_s * inv_eps_sq * d as f64).ceil();
    let cap = params.n_max.floor().max(1.0);
    Ok((t.min(cap).max(1.0) as usize, s.max(1.0) as usize))
}

/// One online key cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    center: Vec<f64>,
    reservoir: Vec<Vec<f64>>,
    count: u64,
}

impl ClusterSummary {
    fn open(k: &[f64], t: usize) -> Self {
        ClusterSummary {
            center: k.to_vec(),
            reservoir: vec![k.to_vec(); t],
            count: 1,
        }
    }

    /// The first key admitted to this cluster.
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// `t` uniform samples (with replacement) of the cluster's keys.
    pub fn reservoir(&self) -> &[Vec<f64>] {
        &self.reservoir
    }

    /// Number of keys admitted so far.
    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Online clustering of keys with per-cluster reservoirs.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizerDs {
    clusters: Vec<ClusterSummary>,
    delta: f64,
    t: usize,
}

/// Where [`NormalizerDs::update`] put a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Joined(usize),
    Opened(usize),
}

impl NormalizerDs {
    pub fn new(delta: f64, t: usize) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::invalid(format!("delta must be > 0, got {delta}")));
        }
        if t == 0 {
            return Err(Error::invalid("reservoir size t must be at least 1"));
        }
        Ok(NormalizerDs {
            clusters: Vec::new(),
            delta,
            t,
        })
    }

    pub fn clusters(&self) -> &[ClusterSummary] {
        &self.clusters
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Index and distance of the nearest center; ties go to the lowest index.
    fn nearest(&self, k: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.clusters.iter().enumerate() {
            let dd = dist(&c.center, k);
            if best.is_none_or(|(_, bd)| dd < bd) {
                best = Some((i, dd));
            }
        }
        best
    }

    /// Admits `k` to its nearest cluster if within `delta`, otherwise opens a
    /// new cluster centered at `k`.
    ///
    /// On admission the count is incremented first, then each of the `t`
    /// reservoir slots is independently overwritten with probability
    /// `1 / count`.
    pub fn update<R: Rng + ?Sized>(&mut self, k: &[f64], rng: &mut R) -> Admission {
        match self.nearest(k) {
            Some((i, dd)) if dd <= self.delta => {
                let cluster = &mut self.clusters[i];
                cluster.count += 1;
                let p = 1.0 / cluster.count as f64;
                for slot in cluster.reservoir.iter_mut() {
                    if rng.random_bool(p) {
                        slot.copy_from_slice(k);
                    }
                }
                Admission::Joined(i)
            }
            _ => {
                self.clusters.push(ClusterSummary::open(k, self.t));
                Admission::Opened(self.clusters.len() - 1)
            }
        }
    }

    /// `Σ count / t · Σ_reservoir exp(<q, k> − shift)`.
    fn partition_estimate(&self, q: &[f64], shift: f64) -> f64 {
        let t = self.t as f64;
        self.clusters
            .iter()
            .map(|c| {
                let inner: f64 = c.reservoir.iter().map(|k| (dot(q, k) - shift).exp()).sum();
                c.count as f64 / t * inner
            })
            .sum()
    }

    fn max_logit(&self, q: &[f64]) -> f64 {
        self.clusters
            .iter()
            .flat_map(|c| c.reservoir.iter())
            .map(|k| dot(q, k))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A sampled `(key, value)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
}

/// `s` independent value-norm weighted samples of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSampler {
    slots: Vec<Option<SamplePair>>,
    mu: f64,
}

impl ValueSampler {
    pub fn new(s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::invalid("sampler size s must be at least 1"));
        }
        Ok(ValueSampler {
            slots: vec![None; s],
            mu: 0.0,
        })
    }

    pub fn s(&self) -> usize {
        self.slots.len()
    }

    /// Running `Σ ‖v‖²` over all processed tokens.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn slots(&self) -> &[Option<SamplePair>] {
        &self.slots
    }

    /// Offers `(k, v)` to every slot; each slot takes it independently with
    /// probability `‖v‖² / (mu + ‖v‖²)` using the current (pre-token) `mu`.
    ///
    /// Zero-norm values are never sampled. Does not touch `mu`; see
    /// [`ValueSampler::add_mass`].
    pub fn update<R: Rng + ?Sized>(&mut self, k: &[f64], v: &[f64], rng: &mut R) {
        let mass = norm_sq(v);
        if mass == 0.0 {
            return;
        }
        let p = mass / (self.mu + mass);
        for slot in self.slots.iter_mut() {
            if rng.random_bool(p) {
                *slot = Some(SamplePair {
                    key: k.to_vec(),
                    value: v.to_vec(),
                });
            }
        }
    }

    pub fn add_mass(&mut self, v: &[f64]) {
        self.mu += norm_sq(v);
    }

    fn max_logit(&self, q: &[f64]) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|p| dot(q, &p.key))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Memory counters of a [`SubGenState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    /// `m′ (t + 1) + 2 s`: reservoirs and centers plus sampled key/value pairs.
    pub vectors_stored: u64,
    /// Cluster counts plus `mu`, `n`, `delta`.
    pub scalars_stored: u64,
    pub bytes_estimate: u64,
}

/// Full streaming state: both sketches, the token count, and the RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGenState {
    normalizer: NormalizerDs,
    sampler: ValueSampler,
    n: u64,
    d: usize,
    rng: StreamRng,
}

impl SubGenState {
    /// Fresh state for dimension `d` with reservoir size `t`, sampler size
    /// `s`, admission radius `delta`, drawing coins from `seed`.
    pub fn new(d: usize, t: usize, s: usize, delta: f64, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(SubGenState {
            normalizer: NormalizerDs::new(delta, t)?,
            sampler: ValueSampler::new(s)?,
            n: 0,
            d,
            rng: rng::split(seed, rng::streams::SUBGEN),
        })
    }

    /// State sized by [`derive_sizes`] for `params`.
    pub fn with_accuracy(
        d: usize,
        params: &AccuracyParams,
        constants: SizeConstants,
        seed: u64,
    ) -> Result<Self> {
        let (t, s) = derive_sizes(params, d, constants)?;
        SubGenState::new(d, t, s, params.delta, seed)
    }

    pub fn normalizer(&self) -> &NormalizerDs {
        &self.normalizer
    }

    pub fn sampler(&self) -> &ValueSampler {
        &self.sampler
    }

    /// Tokens processed so far.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn t(&self) -> usize {
        self.normalizer.t
    }

    pub fn s(&self) -> usize {
        self.sampler.s()
    }

    pub fn delta(&self) -> f64 {
        self.normalizer.delta
    }

    pub fn mu(&self) -> f64 {
        self.sampler.mu
    }

    /// Number of clusters opened so far.
    pub fn m_prime(&self) -> usize {
        self.normalizer.clusters.len()
    }

    /// Folds `(k, v)` into both sketches without answering a query.
    pub fn ingest(&mut self, k: &[f64], v: &[f64]) -> Result<Admission> {
        check_dim(self.d, k)?;
        check_dim(self.d, v)?;
        crate::attn::check_finite("key", k)?;
        crate::attn::check_finite("value", v)?;
        let admission = self.normalizer.update(k, &mut self.rng);
        self.sampler.update(k, v, &mut self.rng);
        self.sampler.add_mass(v);
        self.n += 1;
        Ok(admission)
    }

    /// Incorporates the token's key and value, then answers its query over
    /// all tokens seen so far, the new one included.
    pub fn process_token(&mut self, token: &TokenTriplet) -> Result<AttnVector> {
        check_dim(self.d, &token.q)?;
        crate::attn::check_finite("query", &token.q)?;
        self.ingest(&token.k, &token.v)?;
        self.query(&token.q)
    }

    /// Estimate of `softmax(K q)^T V` from the current sketches.
    ///
    /// Both numerator and denominator are evaluated with every exponent
    /// shifted by the largest logit among the stored keys, which leaves the
    /// ratio unchanged.
    pub fn query(&self, q: &[f64]) -> Result<AttnVector> {
        if self.n == 0 {
            return Err(Error::EmptyStream);
        }
        check_dim(self.d, q)?;
        let shift = self.sampler.max_logit(q).max(self.normalizer.max_logit(q));
        let tau = self.normalizer.partition_estimate(q, shift);

        let mut z = vec![0.0; self.d];
        let scale = self.sampler.mu / self.sampler.s() as f64;
        for pair in self.sampler.slots.iter().flatten() {
            let w = scale / norm_sq(&pair.value) * (dot(q, &pair.key) - shift).exp();
            for (zj, vj) in z.iter_mut().zip(&pair.value) {
                *zj += w * vj;
            }
        }
        for zj in &mut z {
            *zj /= tau;
        }
        Ok(AttnVector(z))
    }

    /// Same estimate with raw (unshifted) exponentials; only meaningful when
    /// no logit overflows.
    #[doc(hidden)]
    pub fn query_unshifted(&self, q: &[f64]) -> Result<AttnVector> {
        if self.n == 0 {
            return Err(Error::EmptyStream);
        }
        check_dim(self.d, q)?;
        let tau = self.normalizer.partition_estimate(q, 0.0);
        let mut z = vec![0.0; self.d];
        for pair in self.sampler.slots.iter().flatten() {
            let w = self.sampler.mu / (self.sampler.s() as f64 * norm_sq(&pair.value))
                * dot(q, &pair.key).exp();
            for (zj, vj) in z.iter_mut().zip(&pair.value) {
                *zj += w * vj;
            }
        }
        Ok(AttnVector(z.into_iter().map(|x| x / tau).collect()))
    }

    /// Estimated softmax normalizer `Σ exp(<k_i, q>)`, unshifted.
    pub fn partition_estimate(&self, q: &[f64]) -> Result<f64> {
        check_dim(self.d, q)?;
        Ok(self.normalizer.partition_estimate(q, 0.0))
    }

    pub fn memory_footprint(&self) -> MemoryFootprint {
        let m = self.m_prime() as u64;
        let vectors_stored = m * (self.t() as u64 + 1) + 2 * self.s() as u64;
        let scalars_stored = m + 3;
        MemoryFootprint {
            vectors_stored,
            scalars_stored,
            bytes_estimate: (vectors_stored * self.d as u64 + scalars_stored) * 8,
        }
    }

    /// Overwrites one cluster count. Exists only so audits can be tested
    /// against a corrupted state.
    #[doc(hidden)]
    pub fn corrupt_cluster_count(&mut self, cluster: usize, count: u64) {
        self.normalizer.clusters[cluster].count = count;
    }
}
