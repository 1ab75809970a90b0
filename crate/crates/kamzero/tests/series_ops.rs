mod common;

use common::{budgets, dims, rng};
use kamzero::{DomainParams, KamError, TFSeries, C64};
use rand::Rng;

fn dp() -> DomainParams {
    DomainParams { s: 0.6, r: 0.1, a: 0.2, p: 1.5 }
}

fn one(re: f64) -> C64 {
    C64::new(re, 0.0)
}

#[test]
fn weighted_norm_of_single_terms() {
    let d = dims();
    let f = TFSeries::from_terms(d.clone(), budgets(6), [(d.key().k(&[2, -1]).build(), C64::new(0.0, -3.0))]);
    assert!((f.weighted_norm(&dp()) - 3.0 * (3.0 * 0.6f64).exp()).abs() < 1e-12);
    let z = TFSeries::from_terms(d.clone(), budgets(6), [(d.key().z(4, 1).build(), one(1.0))]);
    let want = 0.1 / (4f64.powf(1.5) * (0.2 * 4.0f64).exp());
    assert!((z.weighted_norm(&dp()) - want).abs() < 1e-15);
    assert_eq!(TFSeries::new(d, budgets(6)).weighted_norm(&dp()), 0.0);
}

#[test]
fn vector_field_norm_examples() {
    let d = dims();
    let y = TFSeries::from_terms(d.clone(), budgets(6), [(d.key().y(0, 1).build(), one(1.0))]);
    assert!((y.vector_field_norm(&dp()) - 1.0).abs() < 1e-15);
    let c = TFSeries::from_terms(d.clone(), budgets(6), [(d.key().build(), one(7.0))]);
    assert_eq!(c.vector_field_norm(&dp()), 0.0);
}

#[test]
fn split_examples() {
    let d = dims();
    let ky = d.key().y(0, 1).build();
    let kz = d.key().z(3, 1).z(4, 1).z(5, 1).build();
    let r = TFSeries::from_terms(d.clone(), budgets(6), [(ky.clone(), one(1.0)), (kz.clone(), one(1.0))]);
    let (low, high) = r.split_low_high();
    assert_eq!(low.len(), 1);
    assert_eq!(low.coeff(&ky), one(1.0));
    assert_eq!(high.len(), 1);
    assert_eq!(high.coeff(&kz), one(1.0));
    let quartic = TFSeries::from_terms(d.clone(), budgets(6), [(d.key().y(0, 2).build(), one(1.0))]);
    assert!(quartic.split_low_high().0.is_empty());
}

#[test]
fn fourier_truncate_examples() {
    let d = dims();
    let mut g = rng(3);
    let r = common::random_series(&mut g, &d, budgets(6), 30, 4);
    let all = r.fourier_truncate(64.0, 0.3, &dp()).unwrap();
    assert!(all.tail.is_empty());
    let t = TFSeries::from_terms(d.clone(), budgets(6), [(d.key().k(&[3, -2]).build(), one(2.0))]);
    let sp = t.fourier_truncate(4.0, 0.3, &dp()).unwrap();
    assert!(sp.trunc.is_empty());
    assert_eq!(sp.tail.terms(), t.terms());
    assert!(matches!(t.fourier_truncate(4.0, 0.6, &dp()), Err(KamError::Domain(_))));
}

#[test]
fn fourier_tail_within_bound() {
    let d = dims();
    let mut g = rng(11);
    for _ in 0..10 {
        let mut r = TFSeries::new(d.clone(), common::budgets(6));
        for _ in 0..60 {
            let k = [g.gen_range(-20..=20), g.gen_range(-20..=20)];
            let key = d.key().k(&k).z(3, g.gen_range(0..2)).y(0, g.gen_range(0..2)).build();
            r.add_term(key, common::crandn(&mut g));
        }
        for kc in [4.0, 8.0, 16.0] {
            let sp = r.fourier_truncate(kc, dp().s / 2.0, &dp()).unwrap();
            assert!(sp.tail_norm <= sp.bound, "K = {kc}: {} > {}", sp.tail_norm, sp.bound);
            assert!(sp.ratio <= 1.0);
        }
    }
}

#[test]
fn lie_transform_examples() {
    let d = dims();
    let h = TFSeries::from_terms(d.clone(), budgets(6), [(d.key().y(0, 1).build(), one(1.0))]);
    let zero = TFSeries::new(d.clone(), budgets(6));
    assert_eq!(h.lie_transform(&zero, 3).unwrap().series.terms(), h.terms());
    let eps = 1e-3;
    let f = TFSeries::from_terms(d.clone(), budgets(6), [(d.key().k(&[1, 0]).build(), one(eps))]);
    let out = h.lie_transform(&f, 1).unwrap().series;
    // {y₁, ε e^{ix₁}} = −∂_{y₁}y₁ · ∂_{x₁}(ε e^{ix₁}) = −iε e^{ix₁}
    assert_eq!(out.len(), 2);
    assert_eq!(out.coeff(&d.key().y(0, 1).build()), one(1.0));
    assert_eq!(out.coeff(&d.key().k(&[1, 0]).build()), C64::new(0.0, -eps));
}

#[test]
fn text_format_round_trips_random_series() {
    let d = dims();
    let mut g = rng(5);
    let r = common::random_series(&mut g, &d, budgets(6), 25, 4);
    let back = TFSeries::from_text(&r.to_text()).unwrap();
    assert_eq!(back.terms(), r.terms());
}
