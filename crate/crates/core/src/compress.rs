//! Offline and eviction-style cache compressors.
//!
//! Every policy reduces an [`ExactCache`] to a [`RetainedCache`] of at most
//! `budget` rows and answers queries with exact attention over what it kept.

use serde::{Deserialize, Serialize};

use crate::attn::{dist, dot, exact_attention, stable_softmax, AttnVector, ExactCache};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Recent window plus greedy k-center representatives of older keys.
    SubgenOffline,
    /// First `sink_prefix` tokens plus the recent window.
    Sink,
    /// Recent window plus the highest accumulated-attention tokens.
    H2oLite,
    /// Keeps everything.
    Exact,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::SubgenOffline => "subgen_offline",
            PolicyKind::Sink => "sink",
            PolicyKind::H2oLite => "h2o_lite",
            PolicyKind::Exact => "exact",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subgen_offline" => Ok(PolicyKind::SubgenOffline),
            "sink" => Ok(PolicyKind::Sink),
            "h2o_lite" => Ok(PolicyKind::H2oLite),
            "exact" => Ok(PolicyKind::Exact),
            other => Err(Error::invalid(format!("unknown policy {other:?}"))),
        }
    }
}

/// Compression policy and its window sizes.
///
/// `recent_r` is the length of the recency window, unrelated to the query
/// norm bound used for sizing the streaming estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default)]
    pub recent_r: usize,
    /// Number of greedy k-center representatives (`subgen_offline`).
    #[serde(default)]
    pub k_centers: usize,
    /// Number of leading tokens always kept (`sink`).
    #[serde(default)]
    pub sink_prefix: usize,
    /// Number of heavy-hitter tokens kept besides the window (`h2o_lite`).
    #[serde(default)]
    pub heavy_hitters: usize,
}

impl PolicyConfig {
    pub fn exact() -> Self {
        PolicyConfig {
            kind: PolicyKind::Exact,
            recent_r: 0,
            k_centers: 0,
            sink_prefix: 0,
            heavy_hitters: 0,
        }
    }

    pub fn sink(sink_prefix: usize, recent_r: usize) -> Self {
        PolicyConfig {
            sink_prefix,
            recent_r,
            ..PolicyConfig::with_kind(PolicyKind::Sink)
        }
    }

    pub fn subgen_offline(recent_r: usize, k_centers: usize) -> Self {
        PolicyConfig {
            recent_r,
            k_centers,
            ..PolicyConfig::with_kind(PolicyKind::SubgenOffline)
        }
    }

    pub fn h2o_lite(recent_r: usize, heavy_hitters: usize) -> Self {
        PolicyConfig {
            recent_r,
            heavy_hitters,
            ..PolicyConfig::with_kind(PolicyKind::H2oLite)
        }
    }

    fn with_kind(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            ..PolicyConfig::exact()
        }
    }

    /// Maximum number of retained tokens, `None` for [`PolicyKind::Exact`].
    pub fn budget(&self) -> Result<Option<usize>> {
        let sum = |a: usize, b: usize| {
            a.checked_add(b)
                .ok_or_else(|| Error::invalid("policy budget overflows"))
        };
        let budget = match self.kind {
            PolicyKind::Exact => return Ok(None),
            PolicyKind::SubgenOffline => sum(self.recent_r, self.k_centers)?,
            PolicyKind::Sink => sum(self.sink_prefix, self.recent_r)?,
            PolicyKind::H2oLite => sum(self.recent_r, self.heavy_hitters)?,
        };
        if budget == 0 {
            return Err(Error::invalid(format!(
                "{} policy retains no tokens",
                self.kind.name()
            )));
        }
        Ok(Some(budget))
    }
}

/// The rows a policy decided to keep.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedCache {
    /// 1-based stream positions, strictly increasing.
    pub kept_indices: Vec<usize>,
    pub cache: ExactCache,
    pub budget: usize,
}

impl RetainedCache {
    fn from_rows(source: &ExactCache, mut rows: Vec<usize>, budget: usize) -> Self {
        rows.sort_unstable();
        rows.dedup();
        RetainedCache {
            kept_indices: rows.iter().map(|i| i + 1).collect(),
            cache: source.select(&rows),
            budget,
        }
    }

    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }

    /// Retained keys plus retained values.
    pub fn vectors_stored(&self) -> u64 {
        2 * self.len() as u64
    }
}

/// Farthest-point (Gonzalez) traversal starting at index 0.
///
/// Each subsequent center is the point farthest from its nearest chosen
/// center, ties going to the lowest index. The covering radius is within a
/// factor 2 of optimal.
pub fn greedy_k_center(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the number of points {}",
            points.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut centers = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut next = 0;
    while centers.len() < k {
        centers.push(next);
        let c = &points[next];
        let mut far = (0, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            let dd = dist(c, p);
            if dd < nearest[i] {
                nearest[i] = dd;
            }
            if nearest[i] > far.1 {
                far = (i, nearest[i]);
            }
        }
        next = far.0;
    }
    Ok(centers)
}

/// Largest distance from any point to its nearest center.
pub fn covering_radius(points: &[Vec<f64>], centers: &[usize]) -> f64 {
    points
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|&c| dist(p, &points[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Reduces `cache` under `cfg`.
///
/// `queries[i]` is the query issued right after token `i` arrived; only
/// `h2o_lite` reads them. Caches that already fit the budget are returned
/// whole.
pub fn compress(cache: &ExactCache, queries: &[Vec<f64>], cfg: &PolicyConfig) -> Result<RetainedCache> {
    let n = cache.len();
    let budget = match cfg.budget()? {
        None => return Ok(RetainedCache::from_rows(cache, (0..n).collect(), n)),
        Some(b) => b,
    };
    if n <= budget {
        return Ok(RetainedCache::from_rows(cache, (0..n).collect(), budget));
    }
    let recent = cfg.recent_r.min(n);
    let window = n - recent..n;
    let rows = match cfg.kind {
        PolicyKind::Exact => unreachable!("exact has no budget"),
        PolicyKind::Sink => (0..cfg.sink_prefix).chain(window).collect(),
        PolicyKind::SubgenOffline => {
            let older = &cache.keys()[..window.start];
            let k = cfg.k_centers.min(older.len());
            let mut rows = greedy_k_center(older, k)?;
            rows.extend(window);
            rows
        }
        PolicyKind::H2oLite => {
            let mut h2o = H2oLite::new(cfg.recent_r, cfg.heavy_hitters)?;
            for i in 0..n {
                h2o.push(queries.get(i).map(Vec::as_slice), cache.keys());
            }
            h2o.retained
        }
    };
    Ok(RetainedCache::from_rows(cache, rows, budget))
}

/// Streaming heavy-hitter eviction.
///
/// Each arriving token starts with score 0. The query issued at that step
/// attends (exactly) over the retained tokens and its softmax weights are
/// added to their scores. If the cache then exceeds its budget, the
/// lowest-scoring token outside the recency window is evicted, oldest first
/// on ties. Scores of evicted tokens are dropped.
#[derive(Debug, Clone)]
struct H2oLite {
    recent_r: usize,
    budget: usize,
    retained: Vec<usize>,
    scores: Vec<f64>,
    seen: usize,
}

impl H2oLite {
    fn new(recent_r: usize, heavy: usize) -> Result<Self> {
        let budget = recent_r + heavy;
        if budget == 0 {
            return Err(Error::invalid("h2o_lite retains no tokens"));
        }
        Ok(H2oLite {
            recent_r,
            budget,
            retained: Vec::with_capacity(budget + 1),
            scores: Vec::with_capacity(budget + 1),
            seen: 0,
        })
    }

    fn push(&mut self, q: Option<&[f64]>, keys: &[Vec<f64>]) {
        self.retained.push(self.seen);
        self.scores.push(0.0);
        self.seen += 1;

        if let Some(q) = q {
            let logits: Vec<f64> = self.retained.iter().map(|&i| dot(&keys[i], q)).collect();
            for (s, w) in self.scores.iter_mut().zip(stable_softmax(&logits)) {
                *s += w;
            }
        }

        if self.retained.len() > self.budget {
            let window_start = self.seen.saturating_sub(self.recent_r);
            let victim = self
                .retained
                .iter()
                .zip(&self.scores)
                .enumerate()
                .filter(|(_, (&pos, _))| pos < window_start)
                .min_by(|(_, (_, a)), (_, (_, b))| a.total_cmp(b))
                .map(|(slot, _)| slot);
            // With budget ≥ recent_r + 1 there is always a token outside the window.
            let slot = victim.unwrap_or(0);
            self.retained.remove(slot);
            self.scores.remove(slot);
        }
    }
}

/// Exact attention over the retained rows.
pub fn query_compressed(rc: &RetainedCache, q: &[f64]) -> Result<AttnVector> {
    if rc.is_empty() {
        return Err(Error::NoTokens);
    }
    exact_attention(&rc.cache, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_cache(n: usize) -> ExactCache {
        ExactCache::from_rows(
            (0..n).map(|i| vec![i as f64]).collect(),
            (0..n).map(|i| vec![1.0 + i as f64]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn k_equal_to_n_returns_all() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 1.5, 1.0]).collect();
        let mut c = greedy_k_center(&pts, 5).unwrap();
        c.sort();
        assert_eq!(c, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn farthest_point_walk_on_a_line() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        let c = greedy_k_center(&pts, 2).unwrap();
        assert_eq!(c, vec![0, 2]);
        assert_eq!(covering_radius(&pts, &c), 1.0);
    }

    #[test]
    fn k_center_ties_pick_lowest_index() {
        let pts = vec![vec![0.0], vec![-2.0], vec![2.0]];
        assert_eq!(greedy_k_center(&pts, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn k_center_rejects_too_many_centers() {
        assert!(greedy_k_center(&[vec![0.0]], 2).is_err());
        assert_eq!(greedy_k_center(&[vec![0.0]], 0).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn small_cache_is_kept_whole() {
        let cache = line_cache(4);
        for cfg in [
            PolicyConfig::sink(2, 2),
            PolicyConfig::subgen_offline(2, 3),
            PolicyConfig::h2o_lite(1, 3),
            PolicyConfig::exact(),
        ] {
            let rc = compress(&cache, &[], &cfg).unwrap();
            assert_eq!(rc.kept_indices, vec![1, 2, 3, 4]);
        }
    }

    #[test]
    fn sink_keeps_first_and_last() {
        let rc = compress(&line_cache(10), &[], &PolicyConfig::sink(2, 2)).unwrap();
        assert_eq!(rc.kept_indices, vec![1, 2, 9, 10]);
        assert_eq!(rc.cache.keys(), &[vec![0.0], vec![1.0], vec![8.0], vec![9.0]]);
    }

    #[test]
    fn offline_without_centers_is_a_sliding_window() {
        let rc = compress(&line_cache(10), &[], &PolicyConfig::subgen_offline(3, 0)).unwrap();
        assert_eq!(rc.kept_indices, vec![8, 9, 10]);
    }

    #[test]
    fn offline_centers_cover_older_keys() {
        let rc = compress(&line_cache(10), &[], &PolicyConfig::subgen_offline(2, 2)).unwrap();
        // Older keys 0..8 on a line: centers 0 and 7.
        assert_eq!(rc.kept_indices, vec![1, 8, 9, 10]);
    }

    #[test]
    fn h2o_keeps_attended_tokens() {
        // Token 2 carries a large key that every positive query favours.
        let mut keys: Vec<Vec<f64>> = (0..8).map(|_| vec![0.0]).collect();
        keys[2] = vec![5.0];
        let values = (0..8).map(|i| vec![i as f64]).collect();
        let cache = ExactCache::from_rows(keys, values).unwrap();
        let queries = vec![vec![1.0]; 8];
        let rc = compress(&cache, &queries, &PolicyConfig::h2o_lite(2, 1)).unwrap();
        assert_eq!(rc.kept_indices, vec![3, 7, 8]);
    }

    #[test]
    fn h2o_with_full_budget_is_exact() {
        let cache = line_cache(6);
        let queries = vec![vec![0.3]; 6];
        let rc = compress(&cache, &queries, &PolicyConfig::h2o_lite(2, 4)).unwrap();
        assert_eq!(rc.cache, cache);
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(compress(&line_cache(3), &[], &PolicyConfig::sink(0, 0)).is_err());
    }

    #[test]
    fn query_over_single_token() {
        let rc = compress(&line_cache(5), &[], &PolicyConfig::sink(0, 1)).unwrap();
        assert_eq!(query_compressed(&rc, &[3.0]).unwrap().0, vec![5.0]);
    }

    #[test]
    fn query_over_full_cache_is_exact() {
        let cache = line_cache(5);
        let rc = compress(&cache, &[], &PolicyConfig::exact()).unwrap();
        let q = [0.2];
        assert_eq!(query_compressed(&rc, &q).unwrap(), exact_attention(&cache, &q).unwrap());
    }
}
