//! Per-token invariant checks on a [`SubGenState`].

use serde::{Deserialize, Serialize};

use crate::attn::{dist, norm_sq};
use crate::stream_attn::SubGenState;

/// Slack on the geometric invariants.
pub const GEOMETRY_SLACK: f64 = 1e-9;
/// Relative tolerance on the running value mass.
pub const MU_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantId {
    /// `mu` equals the sum of squared value norms seen so far.
    MuSum,
    /// Cluster counts sum to the number of processed tokens.
    CountSum,
    /// Every reservoir key lies within `delta` of its cluster center.
    ReservoirRadius,
    /// Distinct centers are more than `delta` apart.
    CenterSeparation,
    /// At most `m` clusters on an `(m, delta)`-clusterable stream.
    ClusterBound,
    /// Every reservoir holds exactly `t` keys.
    ReservoirLength,
    /// No empty sampler slot once a nonzero value was seen.
    SamplerFilled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: u64,
    pub invariant: InvariantId,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub steps_checked: u64,
    pub violations: u64,
    pub first: Option<Violation>,
    pub max_m_prime: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn merge(&mut self, other: &AuditReport) {
        self.steps_checked += other.steps_checked;
        self.violations += other.violations;
        self.max_m_prime = self.max_m_prime.max(other.max_m_prime);
        if self.first.is_none() {
            self.first = other.first.clone();
        }
    }
}

/// Tracks shadow totals alongside a state and checks it after each token.
#[derive(Debug, Clone)]
pub struct Auditor {
    cluster_bound: Option<usize>,
    shadow_mu: f64,
    shadow_n: u64,
    seen_mass: bool,
    report: AuditReport,
}

impl Auditor {
    /// `cluster_bound` is `Some(m)` when the stream is known to be
    /// `(m, delta)`-clusterable.
    pub fn new(cluster_bound: Option<usize>) -> Self {
        Auditor {
            cluster_bound,
            shadow_mu: 0.0,
            shadow_n: 0,
            seen_mass: false,
            report: AuditReport::default(),
        }
    }

    /// Records that a token with value `v` was fed to the state.
    pub fn record_token(&mut self, v: &[f64]) {
        let mass = norm_sq(v);
        self.shadow_mu += mass;
        self.shadow_n += 1;
        self.seen_mass |= mass > 0.0;
    }

    /// Checks every invariant against `state` as of `step` (1-based).
    pub fn check(&mut self, step: u64, state: &SubGenState) {
        let mut found: Vec<(InvariantId, String)> = Vec::new();

        if (state.mu() - self.shadow_mu).abs() > MU_REL_TOL * self.shadow_mu {
            found.push((
                InvariantId::MuSum,
                format!("mu = {} but shadow sum = {}", state.mu(), self.shadow_mu),
            ));
        }

        let clusters = state.normalizer().clusters();
        let count_sum: u64 = clusters.iter().map(|c| c.count()).sum();
        if count_sum != self.shadow_n || state.n() != self.shadow_n {
            found.push((
                InvariantId::CountSum,
                format!(
                    "counts sum to {count_sum}, state n = {}, tokens fed = {}",
                    state.n(),
                    self.shadow_n
                ),
            ));
        }

        let delta = state.delta();
        for (i, c) in clusters.iter().enumerate() {
            if c.reservoir().len() != state.t() {
                found.push((
                    InvariantId::ReservoirLength,
                    format!("cluster {i} holds {} keys", c.reservoir().len()),
                ));
            }
            if let Some(far) = c
                .reservoir()
                .iter()
                .map(|k| dist(k, c.center()))
                .find(|&r| r > delta + GEOMETRY_SLACK)
            {
                found.push((
                    InvariantId::ReservoirRadius,
                    format!("cluster {i} holds a key at distance {far}"),
                ));
            }
        }

        'pairs: for (i, a) in clusters.iter().enumerate() {
            for (j, b) in clusters.iter().enumerate().skip(i + 1) {
                let dd = dist(a.center(), b.center());
                if dd <= delta - GEOMETRY_SLACK {
                    found.push((
                        InvariantId::CenterSeparation,
                        format!("centers {i} and {j} are {dd} apart"),
                    ));
                    break 'pairs;
                }
            }
        }

        if let Some(m) = self.cluster_bound {
            if clusters.len() > m {
                found.push((
                    InvariantId::ClusterBound,
                    format!("{} clusters for an {m}-clusterable stream", clusters.len()),
                ));
            }
        }

        if self.seen_mass && state.sampler().slots().iter().any(Option::is_none) {
            found.push((InvariantId::SamplerFilled, "empty sampler slot".into()));
        }

        self.report.steps_checked += 1;
        self.report.max_m_prime = self.report.max_m_prime.max(clusters.len());
        self.report.violations += found.len() as u64;
        if self.report.first.is_none() {
            if let Some((invariant, detail)) = found.into_iter().next() {
                self.report.first = Some(Violation {
                    step,
                    invariant,
                    detail,
                });
            }
        }
    }

    pub fn report(&self) -> &AuditReport {
        &self.report
    }

    pub fn into_report(self) -> AuditReport {
        self.report
    }
}

/// Feeds `tokens` through `state`, auditing after every token.
pub fn audit_stream(
    state: &mut SubGenState,
    tokens: &[crate::TokenTriplet],
    cluster_bound: Option<usize>,
) -> crate::Result<AuditReport> {
    let mut auditor = Auditor::new(cluster_bound);
    for (i, tok) in tokens.iter().enumerate() {
        state.process_token(tok)?;
        auditor.record_token(&tok.v);
        auditor.check(i as u64 + 1, state);
    }
    Ok(auditor.into_report())
}
