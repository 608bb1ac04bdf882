//! Run configuration: a TOML document, optionally overridden by CLI flags.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! audit = "invariants"        # off | invariants | distributions
//! out = "subgen-out"
//! stream_kind = "clusterable" # clusterable | adversarial
//!
//! [stream]
//! n = 4096
//! d = 16
//! m = 8
//! delta = 0.25
//! r = 2.0
//! center_separation = 2.0
//! drift = 0.0
//! value_norm_profile = { kind = "powerlaw", alpha = 1.5 }
//!
//! [accuracy]
//! epsilon = 0.5               # r, delta, n_max default to the stream's
//!
//! [[policy]]
//! kind = "sink"
//! sink_prefix = 4
//!
//! [thresholds]
//! final_error_bound = 0.5
//! final_error_min_fraction = 0.9
//! median_below = ["sink", "h2o_lite"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compress::PolicyKind;
use crate::stream_attn::{AccuracyParams, SizeConstants};
use crate::streamgen::{StreamSpec, ValueNormProfile};
use crate::{Error, Result};

/// Minimum repeated trials for distribution audits.
pub const MIN_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditLevel {
    #[default]
    Off,
    Invariants,
    Distributions,
}

impl std::str::FromStr for AuditLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(AuditLevel::Off),
            "invariants" => Ok(AuditLevel::Invariants),
            "distributions" => Ok(AuditLevel::Distributions),
            other => Err(Error::Config(format!("unknown audit level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    #[default]
    Clusterable,
    Adversarial,
}

/// A baseline to run at SubGen's memory budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Leading tokens kept by `sink`.
    #[serde(default = "default_sink_prefix")]
    pub sink_prefix: usize,
    /// Share of the budget given to the recency window by `subgen_offline`
    /// and `h2o_lite`.
    #[serde(default = "default_recent_fraction")]
    pub recent_fraction: f64,
}

fn default_sink_prefix() -> usize {
    4
}

fn default_recent_fraction() -> f64 {
    0.5
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        PolicySpec {
            kind,
            sink_prefix: default_sink_prefix(),
            recent_fraction: default_recent_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracySection {
    pub epsilon: f64,
    pub r: Option<f64>,
    pub delta: Option<f64>,
    pub n_max: Option<f64>,
    #[serde(default = "one")]
    pub c_t: f64,
    #[serde(default = "one")]
    pub c_s: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for AccuracySection {
    fn default() -> Self {
        AccuracySection {
            epsilon: 0.5,
            r: None,
            delta: None,
            n_max: None,
            c_t: 1.0,
            c_s: 1.0,
        }
    }
}

/// Declared pass/fail thresholds; all optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Bound on SubGen's final-step spectral error.
    pub final_error_bound: Option<f64>,
    /// Minimum share of seeds whose final-step error is within the bound.
    pub final_error_min_fraction: Option<f64>,
    /// Policies whose median final-step error must exceed SubGen's.
    #[serde(default)]
    pub median_below: Vec<PolicyKind>,
    /// SubGen's final vectors_stored must be identical across seeds.
    #[serde(default)]
    pub constant_memory: bool,
}

fn default_stream() -> StreamSpec {
    StreamSpec {
        n: 4096,
        d: 16,
        m: 8,
        delta: 0.25,
        r: 2.0,
        value_norm_profile: ValueNormProfile::default(),
        center_separation: 2.0,
        drift: 0.0,
        query_scale: 1.0,
        seed: 0,
    }
}

fn default_policies() -> Vec<PolicySpec> {
    vec![
        PolicySpec::new(PolicyKind::Sink),
        PolicySpec::new(PolicyKind::H2oLite),
        PolicySpec::new(PolicyKind::SubgenOffline),
    ]
}

fn default_out() -> PathBuf {
    PathBuf::from("subgen-out")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_trials() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_stream")]
    pub stream: StreamSpec,
    #[serde(default)]
    pub stream_kind: StreamKind,
    #[serde(default)]
    pub accuracy: AccuracySection,
    #[serde(default = "default_policies", rename = "policy")]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub audit: AuditLevel,
    /// Trials per distribution audit.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Write measured wall times into the step CSV (breaks byte-identity).
    #[serde(default)]
    pub record_wall_time: bool,
    /// Worker threads; 0 means one per available core.
    #[serde(default)]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.audit == AuditLevel::Distributions && self.trials < MIN_TRIALS {
            return Err(Error::Config(format!(
                "distribution audits need at least {MIN_TRIALS} trials, got {}",
                self.trials
            )));
        }
        match self.stream_kind {
            StreamKind::Clusterable => self.stream.validate().map_err(cfg_err)?,
            StreamKind::Adversarial => {
                if self.stream.n == 0 || self.stream.d == 0 {
                    return Err(Error::Config("n and d must be positive".into()));
                }
            }
        }
        self.accuracy_params().validate().map_err(cfg_err)?;
        for c in [self.accuracy.c_t, self.accuracy.c_s] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config("size constants must be positive".into()));
            }
        }
        for p in &self.policies {
            if !(0.0..=1.0).contains(&p.recent_fraction) {
                return Err(Error::Config(format!(
                    "recent_fraction must be in [0, 1], got {}",
                    p.recent_fraction
                )));
            }
        }
        if let Some(f) = self.thresholds.final_error_min_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config("final_error_min_fraction must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn accuracy_params(&self) -> AccuracyParams {
        AccuracyParams {
            epsilon: self.accuracy.epsilon,
            r: self.accuracy.r.unwrap_or(self.stream.r),
            delta: self.accuracy.delta.unwrap_or(self.stream.delta),
            n_max: self.accuracy.n_max.unwrap_or(self.stream.n as f64),
        }
    }

    pub fn size_constants(&self) -> SizeConstants {
        SizeConstants {
            c_t: self.accuracy.c_t,
            c_s: self.accuracy.c_s,
        }
    }
}

/// Parses a seed list: comma-separated values and half-open `a..b` ranges.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = |s: &str| Error::Config(format!("bad seed list entry {s:?}"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad(part))?;
            let b: u64 = b.trim().parse().map_err(|_| bad(part))?;
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg.stream.n, 4096);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.policies.len(), 3);
        assert_eq!(cfg.accuracy_params().n_max, 4096.0);
    }

    #[test]
    fn full_document_parses() {
        let cfg = RunConfig::from_toml(
            r#"
            seeds = [3, 4]
            audit = "invariants"
            stream_kind = "adversarial"
            [stream]
            n = 100
            d = 4
            m = 2
            delta = 0.5
            r = 1.0
            center_separation = 3.0
            value_norm_profile = { kind = "uniform" }
            [accuracy]
            epsilon = 0.25
            n_max = 1000
            [[policy]]
            kind = "exact"
            [[policy]]
            kind = "h2o_lite"
            recent_fraction = 0.25
            [thresholds]
            final_error_bound = 0.25
            median_below = ["sink"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.stream_kind, StreamKind::Adversarial);
        assert_eq!(cfg.stream.value_norm_profile, ValueNormProfile::Uniform);
        assert_eq!(cfg.accuracy_params().n_max, 1000.0);
        assert_eq!(cfg.accuracy_params().delta, 0.5);
        assert_eq!(cfg.policies[1].recent_fraction, 0.25);
        assert_eq!(cfg.thresholds.median_below, vec![PolicyKind::Sink]);
    }

    #[test]
    fn bad_documents_are_config_errors() {
        for text in [
            "seeds = []",
            "audit = \"loud\"",
            "bogus = 1",
            "audit = \"distributions\"\ntrials = 10",
            "[accuracy]\nepsilon = 2.0",
            "[[policy]]\nkind = \"fifo\"",
            "[stream]\nn = 10\nd = 2\nm = 20\ndelta = 0.1\nr = 1.0\ncenter_separation = 1.0",
        ] {
            assert!(
                matches!(RunConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1, 5,7").unwrap(), vec![1, 5, 7]);
        assert_eq!(parse_seeds("0..3,9").unwrap(), vec![0, 1, 2, 9]);
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }
}
