use kamzero::config::parse_config;
use kamzero::homological::enumerate_k;
use kamzero::kam::{schedule, BaseParams};
use kamzero::pipeline::measure_config;
use kamzero::{estimate_excluded, Dims, Family, NormalForm, ParameterGrid};
use proptest::prelude::*;

fn base(gamma1: f64) -> BaseParams {
    BaseParams { n: 2, b: 0, tau: 2.5, s1: 1.0, r1: 0.1, gamma1, a: 0.1, p: 1.0 }
}

fn flat_fraction(gamma1: f64, kcut: u32, samples: usize) -> f64 {
    let dims = Dims::new(2, &[], &[], 0).unwrap();
    let params = schedule(1, &base(gamma1), 1e-6, 0.1);
    let grid = ParameterGrid::new(vec![0.1, 0.2], vec![1.1, 0.9], vec![samples, samples]).unwrap();
    let nf = |xi: &[f64]| NormalForm::with_frequencies(&dims, xi, |_| 0.0).unwrap();
    estimate_excluded(&grid, &dims, nf, &params, kcut, &[Family::KL]).unwrap().families[0].fraction
}

#[test]
fn flat_map_matches_direct_count() {
    let (gamma1, kcut, samples) = (0.02, 4, 60);
    let gamma = schedule(1, &base(gamma1), 1e-6, 0.1).gamma;
    let grid = ParameterGrid::new(vec![0.1, 0.2], vec![1.1, 0.9], vec![samples, samples]).unwrap();
    let ks: Vec<Vec<i32>> = enumerate_k(2, kcut).into_iter().filter(|k| k.iter().any(|&v| v != 0)).collect();
    let mut hit = 0;
    for i in 0..grid.len() {
        let xi = grid.point(i);
        let bad = ks.iter().any(|k| {
            let norm = k.iter().map(|v| v.abs()).sum::<i32>() as f64;
            (k[0] as f64 * xi[0] + k[1] as f64 * xi[1]).abs() < gamma / norm.powf(2.5)
        });
        hit += bad as usize;
    }
    let want = hit as f64 / grid.len() as f64;
    assert!(want > 0.0);
    assert_eq!(flat_fraction(gamma1, kcut, samples), want);
}

#[test]
fn zero_gamma_excludes_nothing() {
    assert_eq!(flat_fraction(0.0, 6, 40), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn monotone_in_gamma_and_cutoff(g in 1e-3f64..5e-2, f in 1.0f64..4.0, kcut in 1u32..5) {
        let small = flat_fraction(g, kcut, 30);
        prop_assert!(flat_fraction(g * f, kcut, 30) >= small);
        prop_assert!(flat_fraction(g, kcut + 1, 30) >= small);
    }
}

#[test]
fn halving_ladder_on_nls_map() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/measure.toml")).unwrap();
    let cfg = parse_config(&text).unwrap();
    let reps = measure_config(&cfg).unwrap();
    assert_eq!(reps.len(), 4);
    for w in reps.windows(2) {
        let (a, b) = (w[0].families[0].fraction, w[1].families[0].fraction);
        assert!(a > 0.0);
        let ratio = b / a;
        assert!((0.3..=0.7).contains(&ratio), "ratio {ratio}");
    }
    for r in &reps {
        assert_eq!(r.samples, 10_000);
        assert!(!r.families[0].exceeds_bound);
    }
}
