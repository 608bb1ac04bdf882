//! Seeded experiment runs: per-step error and memory for SubGen and the
//! baselines at matched budgets, written as CSV plus a JSON summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::audit::{AuditReport, Auditor};
use super::config::{AuditLevel, PolicySpec, RunConfig, StreamKind, Thresholds};
use super::distribution::{distribution_test, DistributionKind, DistributionReport};
use crate::attn::{norm, ErrorScale, ExactCache, TokenTriplet};
use crate::compress::{compress, query_compressed, PolicyConfig, PolicyKind};
use crate::stream_attn::SubGenState;
use crate::streamgen::{generate, generate_adversarial, StreamSpec};
use crate::{Error, Result};

/// Policy label of the streaming estimator in CSV rows.
pub const SUBGEN: &str = "subgen";

pub const CSV_HEADER: [&str; 7] = [
    "seed",
    "step",
    "policy",
    "spectral_error",
    "vectors_stored",
    "m_prime",
    "wall_time_ns",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub seed: u64,
    pub step: u64,
    pub policy: String,
    pub spectral_error: f64,
    pub vectors_stored: u64,
    pub m_prime: usize,
    pub wall_time_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub seed: u64,
    pub step: u64,
    pub policy: String,
    pub wall_time_ns: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SeedOutcome {
    pub rows: Vec<StepRow>,
    pub timings: Vec<TimingRow>,
    pub audit: Option<AuditReport>,
    pub query_norm_violations: u64,
}

/// Powers of two up to `n`, plus `n` itself.
pub fn step_schedule(n: u64) -> Vec<u64> {
    let mut steps: Vec<u64> = (0..64)
        .map(|p| 1u64 << p)
        .take_while(|&s| s <= n)
        .collect();
    if steps.last() != Some(&n) && n > 0 {
        steps.push(n);
    }
    steps
}

/// Tokens for one seed of the configured stream.
pub fn stream_for_seed(cfg: &RunConfig, seed: u64) -> Result<Vec<TokenTriplet>> {
    match cfg.stream_kind {
        StreamKind::Clusterable => {
            let spec = StreamSpec {
                seed,
                ..cfg.stream.clone()
            };
            Ok(generate(&spec)?.tokens)
        }
        StreamKind::Adversarial => generate_adversarial(cfg.stream.n, cfg.stream.d, seed),
    }
}

/// Baseline configuration holding `budget` tokens.
pub fn matched_policy(spec: &PolicySpec, budget: usize) -> Result<PolicyConfig> {
    let recent = ((budget as f64) * spec.recent_fraction).round() as usize;
    Ok(match spec.kind {
        PolicyKind::Exact => PolicyConfig::exact(),
        PolicyKind::Sink => {
            if spec.sink_prefix > budget {
                return Err(Error::invalid(format!(
                    "infeasible budget matching: sink prefix {} exceeds budget {budget}",
                    spec.sink_prefix
                )));
            }
            PolicyConfig::sink(spec.sink_prefix, budget - spec.sink_prefix)
        }
        PolicyKind::H2oLite => PolicyConfig::h2o_lite(recent, budget - recent),
        PolicyKind::SubgenOffline => PolicyConfig::subgen_offline(recent, budget - recent),
    })
}

fn elapsed_ns(start: Instant) -> u64 {
    start.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

/// Runs one seed end to end.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome> {
    let tokens = stream_for_seed(cfg, seed)?;
    let d = tokens.first().map_or(cfg.stream.d, TokenTriplet::dim);
    let params = cfg.accuracy_params();
    let mut state = SubGenState::with_accuracy(d, &params, cfg.size_constants(), seed)?;
    let schedule = step_schedule(tokens.len() as u64);
    let mut auditor = (cfg.audit >= AuditLevel::Invariants).then(|| {
        let bound = (cfg.stream_kind == StreamKind::Clusterable && cfg.stream.drift == 0.0)
            .then_some(cfg.stream.m);
        Auditor::new(bound)
    });

    let mut cache = ExactCache::new(d);
    let mut queries: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
    let mut out = SeedOutcome::default();
    let mut next = schedule.iter().peekable();

    for (i, tok) in tokens.iter().enumerate() {
        let step = i as u64 + 1;
        let start = Instant::now();
        let z = state.process_token(tok)?;
        let subgen_ns = elapsed_ns(start);
        cache.push(tok.k.clone(), tok.v.clone())?;
        queries.push(tok.q.clone());
        if norm(&tok.q) > params.r {
            out.query_norm_violations += 1;
        }
        if let Some(a) = auditor.as_mut() {
            a.record_token(&tok.v);
            a.check(step, &state);
        }

        if next.peek() != Some(&&step) {
            continue;
        }
        next.next();

        let scale = ErrorScale::new(&cache, &tok.q)?;
        let m_prime = state.m_prime();
        let subgen_vectors = state.memory_footprint().vectors_stored;
        let mut push = |policy: &str, error: f64, vectors: u64, ns: u64| {
            out.rows.push(StepRow {
                seed,
                step,
                policy: policy.to_string(),
                spectral_error: error,
                vectors_stored: vectors,
                m_prime,
                wall_time_ns: if cfg.record_wall_time { ns } else { 0 },
            });
            out.timings.push(TimingRow {
                seed,
                step,
                policy: policy.to_string(),
                wall_time_ns: ns,
            });
        };
        push(SUBGEN, scale.error(&z)?, subgen_vectors, subgen_ns);

        let budget = (subgen_vectors / 2) as usize;
        for spec in &cfg.policies {
            let policy = matched_policy(spec, budget)?;
            let start = Instant::now();
            let retained = compress(&cache, &queries, &policy)?;
            let zp = query_compressed(&retained, &tok.q)?;
            let ns = elapsed_ns(start);
            let vectors = retained.vectors_stored();
            if spec.kind != PolicyKind::Exact
                && retained.len() < cache.len()
                && vectors.abs_diff(subgen_vectors) > state.t() as u64 + 1
            {
                return Err(Error::invalid(format!(
                    "infeasible budget matching: {} stores {vectors} vectors vs {subgen_vectors} at step {step}",
                    spec.kind.name()
                )));
            }
            push(spec.kind.name(), scale.error(&zp)?, vectors, ns);
        }
    }
    out.audit = auditor.map(Auditor::into_report);
    Ok(out)
}

/// Nearest-rank quantiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub count: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Quantiles {
            count: v.len(),
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    /// Over seeds, at each seed's last step.
    pub final_error: Quantiles,
    /// Over every recorded (seed, step).
    pub all_steps_error: Quantiles,
    pub final_vectors_stored_min: u64,
    pub final_vectors_stored_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policies: BTreeMap<String, PolicySummary>,
    pub checks: Vec<Check>,
    pub thresholds_pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distributions: Vec<DistributionReport>,
    pub query_norm_violations: u64,
    pub pass: bool,
}

/// Last-step row of every (seed, policy).
fn final_rows(rows: &[StepRow]) -> BTreeMap<(&str, u64), &StepRow> {
    let mut last: BTreeMap<(&str, u64), &StepRow> = BTreeMap::new();
    for r in rows {
        let e = last.entry((r.policy.as_str(), r.seed)).or_insert(r);
        if r.step >= e.step {
            *e = r;
        }
    }
    last
}

/// Per-policy statistics and threshold checks; depends only on `rows`.
pub fn summarize(rows: &[StepRow], thresholds: &Thresholds) -> Summary {
    let finals = final_rows(rows);
    let mut policies = BTreeMap::new();
    let names: Vec<&str> = {
        let mut n: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
        n.sort_unstable();
        n.dedup();
        n
    };
    let finals_of = |name: &str| -> Vec<&StepRow> {
        finals
            .iter()
            .filter(|((p, _), _)| *p == name)
            .map(|(_, r)| *r)
            .collect()
    };
    for name in &names {
        let fin = finals_of(name);
        let fin_err: Vec<f64> = fin.iter().map(|r| r.spectral_error).collect();
        let all_err: Vec<f64> = rows
            .iter()
            .filter(|r| r.policy == *name)
            .map(|r| r.spectral_error)
            .collect();
        policies.insert(
            name.to_string(),
            PolicySummary {
                final_error: Quantiles::of(&fin_err).expect("policy has rows"),
                all_steps_error: Quantiles::of(&all_err).expect("policy has rows"),
                final_vectors_stored_min: fin.iter().map(|r| r.vectors_stored).min().unwrap_or(0),
                final_vectors_stored_max: fin.iter().map(|r| r.vectors_stored).max().unwrap_or(0),
            },
        );
    }

    let mut checks = Vec::new();
    let subgen_final: Vec<f64> = finals_of(SUBGEN).iter().map(|r| r.spectral_error).collect();
    if let Some(bound) = thresholds.final_error_bound {
        let min_fraction = thresholds.final_error_min_fraction.unwrap_or(1.0);
        let within = subgen_final.iter().filter(|&&e| e <= bound).count();
        let fraction = if subgen_final.is_empty() {
            0.0
        } else {
            within as f64 / subgen_final.len() as f64
        };
        checks.push(Check {
            name: format!("subgen final error <= {bound}: fraction of seeds"),
            value: fraction,
            threshold: min_fraction,
            pass: !subgen_final.is_empty() && fraction >= min_fraction,
        });
    }
    let subgen_median = policies.get(SUBGEN).map(|p| p.final_error.p50);
    for other in &thresholds.median_below {
        let theirs = policies.get(other.name()).map(|p| p.final_error.p50);
        let (value, threshold) = (subgen_median.unwrap_or(f64::NAN), theirs.unwrap_or(f64::NAN));
        checks.push(Check {
            name: format!("subgen median final error < {} median", other.name()),
            value,
            threshold,
            pass: value < threshold,
        });
    }
    if thresholds.constant_memory {
        let p = policies.get(SUBGEN);
        let (lo, hi) = p.map_or((0, u64::MAX), |p| {
            (p.final_vectors_stored_min, p.final_vectors_stored_max)
        });
        checks.push(Check {
            name: "subgen final vectors_stored identical across seeds".into(),
            value: hi as f64 - lo as f64,
            threshold: 0.0,
            pass: p.is_some() && lo == hi,
        });
    }

    let thresholds_pass = checks.iter().all(|c| c.pass);
    Summary {
        policies,
        checks,
        thresholds_pass,
        audit: None,
        distributions: Vec::new(),
        query_norm_violations: 0,
        pass: thresholds_pass,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<StepRow>,
    pub timings: Vec<TimingRow>,
    pub summary: Summary,
}

fn worker_count(cfg: &RunConfig) -> usize {
    let n = if cfg.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.workers
    };
    n.clamp(1, cfg.seeds.len().max(1))
}

/// Runs every seed (in parallel), merges rows by (seed, step), summarizes,
/// and folds in audits and distribution tests.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<SeedOutcome>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..worker_count(cfg) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = cfg.seeds.get(idx) else {
                    break;
                };
                let outcome = run_seed(cfg, seed);
                results.lock().expect("worker panicked").push((idx, outcome));
            });
        }
    });
    let mut results = results.into_inner().expect("worker panicked");
    results.sort_by_key(|(idx, _)| *idx);

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut audit: Option<AuditReport> = None;
    let mut violations = 0;
    for (_, outcome) in results {
        let outcome = outcome?;
        rows.extend(outcome.rows);
        timings.extend(outcome.timings);
        violations += outcome.query_norm_violations;
        if let Some(a) = outcome.audit {
            audit.get_or_insert_with(AuditReport::default).merge(&a);
        }
    }
    rows.sort_by_key(|r| (r.seed, r.step));
    timings.sort_by_key(|r| (r.seed, r.step));

    let mut summary = summarize(&rows, &cfg.thresholds);
    summary.query_norm_violations = violations;
    if cfg.audit == AuditLevel::Distributions {
        for kind in [DistributionKind::Sampler, DistributionKind::Reservoir] {
            summary
                .distributions
                .push(distribution_test(kind, cfg.trials, cfg.seeds[0])?);
        }
    }
    summary.pass = summary.thresholds_pass
        && audit.as_ref().is_none_or(AuditReport::passed)
        && summary.distributions.iter().all(|d| d.pass);
    summary.audit = audit;
    Ok(ExperimentReport {
        rows,
        timings,
        summary,
    })
}

pub fn write_rows<W: std::io::Write>(rows: &[StepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<StepRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected CSV header {headers:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Writes `steps.csv`, `timings.csv` and `summary.json` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rows(&report.rows, fs::File::create(dir.join("steps.csv"))?)?;
    let mut timings = csv::Writer::from_path(dir.join("timings.csv"))?;
    for t in &report.timings {
        timings.serialize(t)?;
    }
    timings.flush()?;
    let json = serde_json::to_string_pretty(&report.summary)
        .map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, step: u64, policy: &str, err: f64, vs: u64) -> StepRow {
        StepRow {
            seed,
            step,
            policy: policy.into(),
            spectral_error: err,
            vectors_stored: vs,
            m_prime: 1,
            wall_time_ns: 0,
        }
    }

    #[test]
    fn schedule_is_powers_of_two_plus_last() {
        assert_eq!(step_schedule(1), vec![1]);
        assert_eq!(step_schedule(8), vec![1, 2, 4, 8]);
        assert_eq!(step_schedule(10), vec![1, 2, 4, 8, 10]);
        assert!(step_schedule(0).is_empty());
    }

    #[test]
    fn nearest_rank_quantiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let q = Quantiles::of(&v).unwrap();
        assert_eq!((q.p50, q.p90, q.p99, q.max), (50.0, 90.0, 99.0, 100.0));
        assert_eq!(Quantiles::of(&[3.0]).unwrap().p99, 3.0);
        assert!(Quantiles::of(&[]).is_none());
    }

    #[test]
    fn summary_checks() {
        let rows = vec![
            row(0, 1, SUBGEN, 0.9, 10),
            row(0, 2, SUBGEN, 0.1, 10),
            row(0, 2, "sink", 0.3, 10),
            row(1, 2, SUBGEN, 0.6, 10),
            row(1, 2, "sink", 0.5, 10),
        ];
        let t = Thresholds {
            final_error_bound: Some(0.5),
            final_error_min_fraction: Some(0.5),
            median_below: vec![PolicyKind::Sink, PolicyKind::H2oLite],
            constant_memory: true,
        };
        let s = summarize(&rows, &t);
        assert_eq!(s.checks.len(), 4);
        assert!(s.checks[0].pass);
        assert_eq!(s.checks[0].value, 0.5);
        // subgen finals {0.1, 0.6} → p50 0.1; sink finals {0.3, 0.5} → p50 0.3.
        assert!(s.checks[1].pass);
        assert!(!s.checks[2].pass, "no h2o rows");
        assert!(s.checks[3].pass);
        assert!(!s.thresholds_pass);
        assert_eq!(s.policies[SUBGEN].all_steps_error.count, 3);
    }

    #[test]
    fn csv_round_trip_preserves_summary() {
        let rows = vec![
            row(0, 1, SUBGEN, 0.1 + 0.2, 10),
            row(0, 1, "sink", 1.0 / 3.0, 12),
        ];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("seed,step,policy,spectral_error,vectors_stored,m_prime,wall_time_ns\n"));
        let back = read_rows(&buf[..]).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn matched_budgets() {
        let sink = matched_policy(&PolicySpec::new(PolicyKind::Sink), 10).unwrap();
        assert_eq!((sink.sink_prefix, sink.recent_r), (4, 6));
        let h2o = matched_policy(&PolicySpec::new(PolicyKind::H2oLite), 11).unwrap();
        assert_eq!(h2o.budget().unwrap(), Some(11));
        assert!(matched_policy(&PolicySpec::new(PolicyKind::Sink), 3).is_err());
    }
}
