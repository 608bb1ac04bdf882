//! Seeded synthetic token streams with controllable key clusterability.
//!
//! Keys are drawn round-robin around `m` well-separated centers with a
//! perturbation of norm at most `delta / 2`, so every cluster has diameter
//! at most `delta`. Queries are uniform in the ball of radius `r`; value
//! directions are uniform on the sphere with norms set by a
//! [`ValueNormProfile`].

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attn::{dist, norm, TokenTriplet};
use crate::rng::{split, streams, StreamRng};
use crate::{Error, Result};

/// Rejection rounds allowed when placing centers.
pub const MAX_REJECTION_ROUNDS: usize = 10_000;
/// Lattice spacing of adversarial keys.
pub const ADVERSARIAL_SPACING: f64 = 10.0;

pub const STREAM_MAGIC: [u8; 4] = *b"SBGS";
pub const STREAM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueNormProfile {
    /// Every value has norm 1.
    Uniform,
    /// Norm `rank^(-alpha)` for a seeded random ranking of the tokens.
    Powerlaw { alpha: f64 },
    /// Norm 1, except a seeded 1-in-`SPIKE_PERIOD` share with norm `SPIKE_NORM`.
    Spiky,
}

impl Default for ValueNormProfile {
    fn default() -> Self {
        ValueNormProfile::Powerlaw { alpha: 1.5 }
    }
}

pub const SPIKE_PERIOD: u32 = 50;
pub const SPIKE_NORM: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// Maximum intra-cluster diameter.
    pub delta: f64,
    /// Maximum query norm (before `query_scale`).
    pub r: f64,
    #[serde(default)]
    pub value_norm_profile: ValueNormProfile,
    /// Minimum distance between centers.
    pub center_separation: f64,
    /// Maximum per-step center displacement; 0 keeps centers fixed.
    #[serde(default)]
    pub drift: f64,
    /// Multiplier applied to every query after drawing it.
    #[serde(default = "one")]
    pub query_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.m == 0 {
            return Err(Error::invalid("n, d and m must be positive"));
        }
        if self.m > self.n {
            return Err(Error::invalid(format!("m = {} exceeds n = {}", self.m, self.n)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta must be finite and ≥ 0"));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("r must be finite and > 0"));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(Error::invalid("drift must be finite and ≥ 0"));
        }
        if !(self.query_scale > 0.0 && self.query_scale.is_finite()) {
            return Err(Error::invalid("query_scale must be finite and > 0"));
        }
        if self.m > 1 && self.center_separation.partial_cmp(&self.delta) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid(format!(
                "center_separation {} must exceed delta {}",
                self.center_separation, self.delta
            )));
        }
        if let ValueNormProfile::Powerlaw { alpha } = self.value_norm_profile {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::invalid("power-law alpha must be finite and ≥ 0"));
            }
        }
        Ok(())
    }
}

/// Tokens plus the cluster each key was drawn around.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedStream {
    pub tokens: Vec<TokenTriplet>,
    pub labels: Vec<usize>,
}

impl GeneratedStream {
    pub fn keys(&self) -> Vec<Vec<f64>> {
        self.tokens.iter().map(|t| t.k.clone()).collect()
    }
}

fn gaussian_vec(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vec(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    loop {
        let g = gaussian_vec(rng, d);
        let n = norm(&g);
        if n > 1e-300 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform point in the closed ball of the given radius.
fn ball_vec(rng: &mut StreamRng, d: usize, radius: f64) -> Vec<f64> {
    let u: f64 = rng.random();
    let rho = radius * u.powf(1.0 / d as f64);
    unit_vec(rng, d).into_iter().map(|x| x * rho).collect()
}

fn place_centers(spec: &StreamSpec) -> Result<Vec<Vec<f64>>> {
    let mut rng = split(spec.seed, streams::GEN_CENTERS);
    let radius = spec.center_separation.max(f64::MIN_POSITIVE);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.m);
    let mut rounds = 0;
    while centers.len() < spec.m {
        if rounds == MAX_REJECTION_ROUNDS {
            return Err(Error::InfeasibleSeparation(rounds));
        }
        rounds += 1;
        let c: Vec<f64> = unit_vec(&mut rng, spec.d).into_iter().map(|x| x * radius).collect();
        if centers.iter().all(|o| dist(o, &c) >= spec.center_separation) {
            centers.push(c);
        }
    }
    Ok(centers)
}

fn value_norms(spec: &StreamSpec) -> Vec<f64> {
    let mut rng = split(spec.seed, streams::GEN_VALUES ^ (1 << 40));
    match spec.value_norm_profile {
        ValueNormProfile::Uniform => vec![1.0; spec.n],
        ValueNormProfile::Powerlaw { alpha } => {
            let mut ranks: Vec<usize> = (1..=spec.n).collect();
            ranks.shuffle(&mut rng);
            ranks.into_iter().map(|k| (k as f64).powf(-alpha)).collect()
        }
        ValueNormProfile::Spiky => (0..spec.n)
            .map(|_| {
                if rng.random_ratio(1, SPIKE_PERIOD) {
                    SPIKE_NORM
                } else {
                    1.0
                }
            })
            .collect(),
    }
}

/// Generates the stream described by `spec`.
pub fn generate(spec: &StreamSpec) -> Result<GeneratedStream> {
    spec.validate()?;
    let d = spec.d;
    let mut centers = place_centers(spec)?;
    let mut key_rng = split(spec.seed, streams::GEN_KEYS);
    let mut query_rng = split(spec.seed, streams::GEN_QUERIES);
    let mut value_rng = split(spec.seed, streams::GEN_VALUES);
    let mut drift_rng = split(spec.seed, streams::GEN_DRIFT);
    let norms = value_norms(spec);

    let mut tokens = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for (i, vnorm) in norms.into_iter().enumerate() {
        if spec.drift > 0.0 && i > 0 {
            drift_centers(&mut centers, spec, &mut drift_rng);
        }
        let label = i % spec.m;
        let k: Vec<f64> = centers[label]
            .iter()
            .zip(ball_vec(&mut key_rng, d, spec.delta / 2.0))
            .map(|(c, p)| c + p)
            .collect();
        let q: Vec<f64> = ball_vec(&mut query_rng, d, spec.r)
            .into_iter()
            .map(|x| x * spec.query_scale)
            .collect();
        let v: Vec<f64> = unit_vec(&mut value_rng, d).into_iter().map(|x| x * vnorm).collect();
        tokens.push(TokenTriplet { q, k, v });
        labels.push(label);
    }
    Ok(GeneratedStream { tokens, labels })
}

/// Moves each center by a uniform step of norm ≤ `drift`, skipping moves
/// that would break the separation guarantee.
fn drift_centers(centers: &mut [Vec<f64>], spec: &StreamSpec, rng: &mut StreamRng) {
    for j in 0..centers.len() {
        let step = ball_vec(rng, spec.d, spec.drift);
        let moved: Vec<f64> = centers[j].iter().zip(&step).map(|(c, s)| c + s).collect();
        let separated = centers
            .iter()
            .enumerate()
            .all(|(o, c)| o == j || dist(c, &moved) >= spec.center_separation);
        if separated {
            centers[j] = moved;
        }
    }
}

/// One-sided clusterability check.
///
/// Replays the streaming admission rule (join the nearest opened center if
/// within `delta`, else open a new one) and reports whether at most `m`
/// centers were opened. A `true` answer certifies a partition into `m`
/// groups of diameter at most `2 delta`; a `false` answer does not rule out
/// `(m, delta)`-clusterability.
pub fn verify_clusterable(keys: &[Vec<f64>], m: usize, delta: f64) -> bool {
    let mut centers: Vec<&[f64]> = Vec::new();
    for k in keys {
        let near = centers.iter().any(|c| dist(c, k) <= delta);
        if !near {
            centers.push(k);
            if centers.len() > m {
                return false;
            }
        }
    }
    true
}

/// Negative control: keys on a shuffled integer lattice scaled by
/// [`ADVERSARIAL_SPACING`], so any admission radius below the spacing opens
/// one cluster per key. Queries are scaled so logits stay within `±√d`.
pub fn generate_adversarial(n: usize, d: usize, seed: u64) -> Result<Vec<TokenTriplet>> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("n and d must be positive"));
    }
    let side = (1..).find(|s: &usize| (*s as f64).powi(d.min(64) as i32) >= n as f64).unwrap();
    let mut points: Vec<Vec<f64>> = (0..n)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let coord = idx % side;
                    idx /= side;
                    coord as f64 * ADVERSARIAL_SPACING
                })
                .collect()
        })
        .collect();
    let mut key_rng = split(seed, streams::GEN_KEYS);
    points.shuffle(&mut key_rng);

    let q_radius = 1.0 / (ADVERSARIAL_SPACING * side as f64);
    let mut query_rng = split(seed, streams::GEN_QUERIES);
    let mut value_rng = split(seed, streams::GEN_VALUES);
    Ok(points
        .into_iter()
        .map(|k| TokenTriplet {
            q: ball_vec(&mut query_rng, d, q_radius),
            k,
            v: unit_vec(&mut value_rng, d),
        })
        .collect())
}

/// Writes tokens as `"SBGS" | version u32 | n u64 | d u64` followed by
/// `n × (q, k, v)` rows of little-endian f64.
pub fn write_stream<W: Write>(tokens: &[TokenTriplet], mut w: W) -> Result<()> {
    let d = tokens.first().map_or(0, TokenTriplet::dim);
    let mut buf = Vec::with_capacity(24 + tokens.len() * 3 * d * 8);
    buf.extend_from_slice(&STREAM_MAGIC);
    buf.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    for t in tokens {
        if t.dim() != d || t.q.len() != d || t.v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: t.dim(),
            });
        }
        for x in t.q.iter().chain(&t.k).chain(&t.v) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_stream<R: Read>(mut r: R) -> Result<Vec<TokenTriplet>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 24 || buf[..4] != STREAM_MAGIC {
        return Err(Error::Format("not a token stream".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != STREAM_VERSION {
        return Err(Error::Format(format!("unsupported stream version {version}")));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
    let body = &buf[24..];
    if n.checked_mul(3 * d).and_then(|x| x.checked_mul(8)) != Some(body.len()) {
        return Err(Error::Format("stream length does not match header".into()));
    }
    let floats: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    floats
        .chunks_exact(3 * d.max(1))
        .take(n)
        .map(|row| {
            TokenTriplet::new(row[..d].to_vec(), row[d..2 * d].to_vec(), row[2 * d..].to_vec())
        })
        .collect()
}
