use proptest::prelude::*;

use subgen::compress::{compress, covering_radius, greedy_k_center, query_compressed, PolicyConfig};
use subgen::streamgen::generate_adversarial;
use subgen::{exact_attention, operator_norm, softmax_vector, spectral_error, ExactCache, SubGenState, TokenTriplet};

fn vector(d: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, d)
}

fn matrix(n: std::ops::RangeInclusive<usize>, d: usize, scale: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(vector(d, scale), n)
}

/// `(keys, values, query)` with `n` rows of dimension `d`.
fn attention_case(max_n: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
    (1..=max_n, 1usize..=6).prop_flat_map(|(n, d)| (matrix(n..=n, d, 3.0), matrix(n..=n, d, 5.0), vector(d, 2.0)))
}

fn tokens(n: usize, d: usize) -> impl Strategy<Value = Vec<TokenTriplet>> {
    prop::collection::vec((vector(d, 1.0), vector(d, 2.0), vector(d, 3.0)), n).prop_map(|raw| {
        raw.into_iter()
            .map(|(q, k, v)| TokenTriplet::new(q, k, v).unwrap())
            .collect()
    })
}

fn brute_force_k_center(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; k];
    // Enumerate all k-subsets (with repetition allowed, which does not change the optimum).
    fn rec(points: &[Vec<f64>], pick: &mut Vec<usize>, pos: usize, start: usize, best: &mut f64) {
        if pos == pick.len() {
            *best = best.min(covering_radius(points, pick));
            return;
        }
        for i in start..points.len() {
            pick[pos] = i;
            rec(points, pick, pos + 1, i, best);
        }
    }
    if n > 0 {
        rec(points, &mut pick, 0, 0, &mut best);
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_distribution((keys, values, q) in attention_case(20)) {
        let cache = ExactCache::from_rows(keys, values).unwrap();
        let w = softmax_vector(&cache, &q).unwrap();
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn attention_lies_in_the_value_hull((keys, values, q) in attention_case(20)) {
        let cache = ExactCache::from_rows(keys, values.clone()).unwrap();
        let z = exact_attention(&cache, &q).unwrap();
        for (j, zj) in z.0.iter().enumerate() {
            let lo = values.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
            let hi = values.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*zj >= lo - 1e-12 && *zj <= hi + 1e-12);
        }
    }

    #[test]
    fn attention_is_shift_invariant((keys, values, q) in attention_case(12), c in -500.0f64..500.0) {
        let qn2: f64 = q.iter().map(|x| x * x).sum();
        prop_assume!(qn2 > 1e-3);
        let shifted: Vec<Vec<f64>> = keys
            .iter()
            .map(|k| k.iter().zip(&q).map(|(a, b)| a + c * b / qn2).collect())
            .collect();
        let a = exact_attention(&ExactCache::from_rows(keys, values.clone()).unwrap(), &q).unwrap();
        let b = exact_attention(&ExactCache::from_rows(shifted, values).unwrap(), &q).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            prop_assert!((x - y).abs() <= 1e-7 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn operator_norm_is_bracketed(rows in (1usize..=5).prop_flat_map(|d| matrix(1..=10, d, 4.0))) {
        let op = operator_norm(&rows).unwrap();
        let max_row = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let frob = rows.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(op >= max_row * (1.0 - 1e-9) - 1e-12);
        prop_assert!(op <= frob * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn spectral_error_is_nonnegative((keys, values, q) in attention_case(10), z in vector(6, 3.0)) {
        let d = q.len();
        let cache = ExactCache::from_rows(keys, values).unwrap();
        let e = spectral_error(&subgen::AttnVector(z[..d].to_vec()), &cache, &q).unwrap();
        prop_assert!(e >= 0.0);
    }

    #[test]
    fn greedy_k_center_is_a_two_approximation(
        points in (1usize..=3).prop_flat_map(|d| matrix(1..=10, d, 5.0)),
        k in 1usize..=3,
    ) {
        prop_assume!(k <= points.len());
        let centers = greedy_k_center(&points, k).unwrap();
        prop_assert_eq!(centers.len(), k);
        prop_assert_eq!(centers[0], 0);
        let opt = brute_force_k_center(&points, k);
        prop_assert!(covering_radius(&points, &centers) <= 2.0 * opt + 1e-12);
    }

    #[test]
    fn compressed_caches_respect_their_budget(
        (keys, values, _q) in attention_case(40),
        recent in 0usize..8,
        extra in 1usize..8,
        which in 0usize..3,
    ) {
        let d = keys[0].len();
        let cache = ExactCache::from_rows(keys.clone(), values).unwrap();
        let queries: Vec<Vec<f64>> = keys.iter().map(|k| k.iter().map(|x| x * 0.3).collect()).collect();
        let cfg = match which {
            0 => PolicyConfig::sink(extra, recent),
            1 => PolicyConfig::h2o_lite(recent, extra),
            _ => PolicyConfig::subgen_offline(recent, extra),
        };
        let budget = cfg.budget().unwrap().unwrap();
        let rc = compress(&cache, &queries, &cfg).unwrap();
        let n = keys.len();
        prop_assert_eq!(rc.len(), budget.min(n));
        prop_assert!(rc.kept_indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(rc.kept_indices.iter().all(|&i| (1..=n).contains(&i)));
        // The recent window is always retained.
        for i in n.saturating_sub(recent.min(budget)) + 1..=n {
            prop_assert!(rc.kept_indices.contains(&i), "missing recent token {i}");
        }
        prop_assert_eq!(rc.cache.dim(), d);
    }

    #[test]
    fn full_budget_h2o_is_exact((keys, values, q) in attention_case(16)) {
        let n = keys.len();
        let cache = ExactCache::from_rows(keys.clone(), values).unwrap();
        let rc = compress(&cache, &keys, &PolicyConfig::h2o_lite(1, n)).unwrap();
        let z = query_compressed(&rc, &q).unwrap();
        prop_assert_eq!(spectral_error(&z, &cache, &q).unwrap(), 0.0);
    }

    #[test]
    fn subgen_is_deterministic(toks in tokens(30, 3), seed in any::<u64>()) {
        let mut a = SubGenState::new(3, 4, 6, 0.7, seed).unwrap();
        let mut b = SubGenState::new(3, 4, 6, 0.7, seed).unwrap();
        for t in &toks {
            prop_assert_eq!(a.process_token(t).unwrap(), b.process_token(t).unwrap());
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn shifted_and_raw_estimates_agree(toks in tokens(40, 3), seed in any::<u64>()) {
        let mut st = SubGenState::new(3, 5, 5, 0.5, seed).unwrap();
        for t in &toks {
            let z = st.process_token(t).unwrap();
            let raw = st.query_unshifted(&t.q).unwrap();
            for (x, y) in z.0.iter().zip(&raw.0) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn estimate_matches_recomputation_from_the_sketches(toks in tokens(40, 2), seed in any::<u64>()) {
        let mut st = SubGenState::new(2, 3, 4, 0.6, seed).unwrap();
        for t in &toks {
            st.ingest(&t.k, &t.v).unwrap();
        }
        let q = &toks[0].q;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let tau: f64 = st
            .normalizer()
            .clusters()
            .iter()
            .map(|c| c.count() as f64 / st.t() as f64 * c.reservoir().iter().map(|k| dot(q, k).exp()).sum::<f64>())
            .sum();
        let mut z = [0.0; 2];
        for p in st.sampler().slots().iter().flatten() {
            let w = st.mu() / (st.s() as f64 * dot(&p.value, &p.value)) * dot(q, &p.key).exp();
            z[0] += w * p.value[0];
            z[1] += w * p.value[1];
        }
        let got = st.query(q).unwrap();
        prop_assert!((st.partition_estimate(q).unwrap() - tau).abs() <= 1e-12 * tau);
        for (g, zj) in got.0.iter().zip(z) {
            prop_assert!((g - zj / tau).abs() <= 1e-12 * (1.0 + (zj / tau).abs()));
        }
    }

    #[test]
    fn counts_track_stream_length(toks in tokens(50, 2), seed in any::<u64>(), delta in 0.0f64..3.0) {
        let mut st = SubGenState::new(2, 3, 3, delta, seed).unwrap();
        for (i, t) in toks.iter().enumerate() {
            st.process_token(t).unwrap();
            let total: u64 = st.normalizer().clusters().iter().map(|c| c.count()).sum();
            prop_assert_eq!(total, i as u64 + 1);
            let expect_mu: f64 = toks[..=i].iter().map(|t| t.v.iter().map(|x| x * x).sum::<f64>()).sum();
            prop_assert!((st.mu() - expect_mu).abs() <= 1e-9 * expect_mu.max(1.0));
        }
    }
}

#[test]
fn adversarial_stream_partition_estimate_is_exact() {
    for seed in 0..5 {
        let toks = generate_adversarial(200, 4, seed).unwrap();
        let mut st = SubGenState::new(4, 7, 8, 0.25, seed).unwrap();
        for t in &toks {
            st.ingest(&t.k, &t.v).unwrap();
        }
        assert_eq!(st.m_prime(), 200);
        for t in toks.iter().step_by(17) {
            let exact: f64 = toks
                .iter()
                .map(|u| u.k.iter().zip(&t.q).map(|(a, b)| a * b).sum::<f64>().exp())
                .sum();
            let est = st.partition_estimate(&t.q).unwrap();
            assert!((est - exact).abs() <= 1e-12 * exact, "{est} vs {exact}");
        }
    }
}

#[test]
fn tight_clusters_give_exact_partition_function() {
    // Keys repeat exactly within each cluster, so every reservoir is uniform.
    let centers = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
    let mut st = SubGenState::new(2, 4, 4, 0.5, 8).unwrap();
    let mut keys = Vec::new();
    for i in 0..90 {
        let k = centers[(i * i + 1) % 3];
        st.ingest(&k, &[1.0, (i as f64).sin()]).unwrap();
        keys.push(k);
    }
    let q = [0.4, -0.7];
    let exact: f64 = keys.iter().map(|k| (k[0] * q[0] + k[1] * q[1]).exp()).sum();
    let est = st.partition_estimate(&q).unwrap();
    assert!((est - exact).abs() <= 1e-12 * exact);
}
