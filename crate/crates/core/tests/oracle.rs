//! Exact attention, softmax and operator norm against values frozen from a
//! 50-digit reference computation, plus an in-test Jacobi SVD cross-check.

#![allow(clippy::excessive_precision)]

use subgen::{exact_attention, operator_norm, softmax_vector, spectral_error, AttnVector, ExactCache};

const KEYS: [[f64; 4]; 8] = [
    [-0.21118912055729136, -0.5177334709845255, 0.1495958369624623, -1.7898968436779759],
    [0.2844522535691842, -0.3216956064836901, -0.726050324449302, 0.09853727513129668],
    [-1.9514738484064804, -0.15841288562715672, -0.7312848653804448, 0.40969535789355127],
    [0.44244173776631784, -0.9278626907702291, -0.9331679527718499, -1.4700371639889616],
    [-0.7876892940867893, 0.3194143920162998, 0.8572703661247674, 0.22879972296310866],
    [0.03479925265515608, -0.8674471104434567, 0.19577021284431775, -0.8156895315256701],
    [0.23962888489868106, -0.20259332624012352, 0.8560181034854327, 0.2024703525539789],
    [1.3688252896097017, -0.4082144474715901, 0.7559450824466323, 0.22516072407457527],
];

const VALUES: [[f64; 4]; 8] = [
    [1.6965558201068938, -1.9620539547190585, 0.8742582951813314, -1.0236516100709405],
    [-0.8686467389750054, -0.018363115062379937, -1.5105593611064696, -1.1945810265785586],
    [-0.5055418749192547, -0.32248383162699573, -1.9036789280897755, -0.8736312382373598],
    [-0.14591356690623353, -0.13192758477062216, -0.6623081572224156, -0.004088789106296888],
    [-0.5133744270857837, 1.173498778229933, -0.8091351820079116, 0.05910379879897925],
    [-0.4895950062802856, 0.8545624531310859, -0.9715485115688727, 0.8766026328650387],
    [-1.1953017929996643, -1.366996897121547, -0.5484695736103665, 0.09212685627119044],
    [-1.5210236133299682, -0.5041894554335143, -0.003970465709318486, -0.03555765389596433],
];

const Q: [f64; 4] = [0.8755659365466596, 0.7842735347855208, 0.3328312480926164, 0.9134330350514333];

const SOFTMAX: [f64; 8] = [
    0.014018004608800478792,
    0.10580230055627672425,
    0.022520132836000482856,
    0.016823534059730729505,
    0.13053114726612556861,
    0.032677666146924405405,
    0.20793653873745514071,
    0.46969067578868646988,
];

const ATTN: [f64; 4] = [
    -1.1279298496144362286,
    -0.3788872490579838233,
    -0.45485580186851570187,
    -0.12166639724301415227,
];

const OPNORM: f64 = 3.8817833687356514124;

fn cache() -> ExactCache {
    ExactCache::from_rows(
        KEYS.iter().map(|r| r.to_vec()).collect(),
        VALUES.iter().map(|r| r.to_vec()).collect(),
    )
    .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn softmax_matches_reference() {
    let w = softmax_vector(&cache(), &Q).unwrap();
    for (got, want) in w.iter().zip(SOFTMAX) {
        assert!(rel(*got, want) <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn exact_attention_matches_reference() {
    let z = exact_attention(&cache(), &Q).unwrap();
    for (got, want) in z.0.iter().zip(ATTN) {
        assert!(rel(*got, want) <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn operator_norm_matches_reference() {
    let rows: Vec<Vec<f64>> = VALUES.iter().map(|r| r.to_vec()).collect();
    let got = operator_norm(&rows).unwrap();
    assert!(rel(got, OPNORM) <= 1e-6, "{got} vs {OPNORM}");
}

#[test]
fn spectral_error_of_reference_output_is_tiny() {
    let e = spectral_error(&AttnVector(ATTN.to_vec()), &cache(), &Q).unwrap();
    assert!(e <= 1e-14, "{e}");
}

#[test]
fn shifted_logits_do_not_overflow() {
    // Adding 1000 to every logit (via a key offset along q) leaves softmax unchanged.
    let qn2: f64 = Q.iter().map(|x| x * x).sum();
    let shift: Vec<f64> = Q.iter().map(|x| x * 1000.0 / qn2).collect();
    let keys = KEYS
        .iter()
        .map(|r| r.iter().zip(&shift).map(|(a, b)| a + b).collect())
        .collect();
    let c = ExactCache::from_rows(keys, VALUES.iter().map(|r| r.to_vec()).collect()).unwrap();
    let z = exact_attention(&c, &Q).unwrap();
    for (got, want) in z.0.iter().zip(ATTN) {
        assert!(rel(*got, want) <= 1e-9, "{got} vs {want}");
    }
}

/// Largest singular value by one-sided Jacobi rotations.
fn jacobi_top_singular_value(rows: &[Vec<f64>]) -> f64 {
    let d = rows[0].len();
    // Columns of A (n × d) are orthogonalized in place.
    let mut a: Vec<Vec<f64>> = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in p + 1..d {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = a.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    (*x, *y) = (c * *x - s * *y, s * *x + c * *y);
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    a.iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

#[test]
fn jacobi_oracle_agrees_with_reference() {
    let rows: Vec<Vec<f64>> = VALUES.iter().map(|r| r.to_vec()).collect();
    assert!(rel(jacobi_top_singular_value(&rows), OPNORM) <= 1e-12);
}

#[test]
fn operator_norm_matches_jacobi_on_many_shapes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for trial in 0..200 {
        let n = rng.random_range(1..=12);
        let d = rng.random_range(1..=9);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let want = jacobi_top_singular_value(&rows);
        let got = operator_norm(&rows).unwrap();
        assert!(rel(got, want) <= 1e-6, "trial {trial}: {got} vs {want}");
    }
}

#[test]
fn operator_norm_of_rank_one_and_zero() {
    let rows = vec![vec![3.0, 4.0], vec![6.0, 8.0]];
    assert!(rel(operator_norm(&rows).unwrap(), 125f64.sqrt()) <= 1e-12);
    assert_eq!(operator_norm(&[vec![0.0, 0.0]]).unwrap(), 0.0);
}
