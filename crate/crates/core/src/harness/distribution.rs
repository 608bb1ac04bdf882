//! Monte Carlo checks of the sampling distributions.
//!
//! A fixed tiny stream is replayed through fresh states with independent
//! seeds; slot contents are tallied and compared against the target law by
//! total-variation distance.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::MIN_TRIALS;
use crate::rng::{split, streams};
use crate::stream_attn::SubGenState;
use crate::{Error, Result};

/// Largest total-variation distance accepted.
pub const MAX_TV: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    /// Value sampler on squared norms {1, 2, 3, 4}; target {0.1, 0.2, 0.3, 0.4}.
    Sampler,
    /// Cluster reservoir on keys {a, a, b}; target P(b) = 1/3.
    Reservoir,
    /// Value sampler on a single token; target {1}.
    SingleToken,
}

impl std::str::FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampler" => Ok(DistributionKind::Sampler),
            "reservoir" => Ok(DistributionKind::Reservoir),
            "single_token" | "single" => Ok(DistributionKind::SingleToken),
            other => Err(Error::invalid(format!("unknown distribution test {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub kind: DistributionKind,
    pub trials: usize,
    pub target: Vec<f64>,
    pub empirical: Vec<f64>,
    pub tv_distance: f64,
    pub pass: bool,
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Runs `trials` independent replays, trial `i` seeded from stream
/// `TRIALS + i` of `seed`.
pub fn distribution_test(
    kind: DistributionKind,
    trials: usize,
    seed: u64,
) -> Result<DistributionReport> {
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!(
            "distribution tests need at least {MIN_TRIALS} trials, got {trials}"
        )));
    }

    // Every token gets a distinct first coordinate, used to identify slot contents.
    let (keys, values, target): (Vec<[f64; 2]>, Vec<[f64; 2]>, Vec<f64>) = match kind {
        DistributionKind::Sampler => (
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]],
            (1..=4).map(|w| [(w as f64).sqrt(), 0.0]).collect(),
            vec![0.1, 0.2, 0.3, 0.4],
        ),
        DistributionKind::Reservoir => (
            vec![[0.0, 0.0], [0.0, 0.0], [0.5, 0.0]],
            vec![[1.0, 0.0]; 3],
            vec![2.0 / 3.0, 1.0 / 3.0],
        ),
        DistributionKind::SingleToken => (vec![[0.0, 0.0]], vec![[1.0, 0.0]], vec![1.0]),
    };

    let mut tally = vec![0u64; target.len()];
    for trial in 0..trials {
        let trial_seed = split(seed, streams::TRIALS + trial as u64).next_u64();
        let mut state = SubGenState::new(2, 1, 1, 1.0, trial_seed)?;
        for (k, v) in keys.iter().zip(&values) {
            state.ingest(k, v)?;
        }
        let bucket = match kind {
            DistributionKind::Sampler | DistributionKind::SingleToken => {
                let pair = state.sampler().slots()[0]
                    .as_ref()
                    .expect("sampler filled after a nonzero value");
                pair.key[0] as usize
            }
            DistributionKind::Reservoir => {
                let held = &state.normalizer().clusters()[0].reservoir()[0];
                usize::from(held[0] != 0.0)
            }
        };
        tally[bucket] += 1;
    }

    let empirical: Vec<f64> = tally.iter().map(|&c| c as f64 / trials as f64).collect();
    let tv_distance = total_variation(&empirical, &target);
    Ok(DistributionReport {
        kind,
        trials,
        target,
        empirical,
        tv_distance,
        pass: tv_distance <= MAX_TV,
    })
}
