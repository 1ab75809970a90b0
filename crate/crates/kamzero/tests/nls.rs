use std::f64::consts::PI;

use kamzero::nls::{self, IndexFamily, ParityKind};
use kamzero::pipeline::step_parity;
use kamzero::synthetic::inject_zero_mode_term;
use kamzero::{Budgets, DomainParams, NlsModel, TFSeries, C64};

fn quad(i: u32, j: u32, k: u32, l: u32) -> f64 {
    let n = 2048;
    let h = 2.0 * PI / n as f64;
    let phi = |m: u32, x: f64| if m == 0 { 1.0 / (2.0 * PI).sqrt() } else { (m as f64 * x).cos() / PI.sqrt() };
    (0..n).map(|t| t as f64 * h).map(|x| phi(i, x) * phi(j, x) * phi(k, x) * phi(l, x)).sum::<f64>() * h
}

fn model(jmax: u32) -> NlsModel {
    NlsModel::new(vec![1, 2], vec![0.001, 0.0017], jmax, 2).unwrap()
}

fn kam_budgets() -> Budgets {
    Budgets { d_max: 6, k_max: 64, prune_tol: 1e-16 }
}

#[test]
fn tensor_matches_quadrature() {
    for i in 0..=8 {
        for j in 0..=8 {
            for k in 0..=8 {
                for l in 0..=8 {
                    let (a, b) = (nls::g_tensor(i, j, k, l), quad(i, j, k, l));
                    assert!((a - b).abs() < 1e-13, "G({i},{j},{k},{l}) = {a} vs {b}");
                }
            }
        }
    }
    assert!((nls::g_tensor(0, 0, 0, 0) - 1.0 / (2.0 * PI)).abs() < 1e-15);
    assert_eq!(nls::g_tensor(1, 1, 1, 4), 0.0);
}

#[test]
fn birkhoff_removes_nonaction_quartics() {
    let m = model(6);
    let d = m.birkhoff_dims().unwrap();
    let key = d.key().z(1, 1).z(3, 1).zb(2, 2).build();
    let g = nls::quartic_series(&d, kam_budgets());
    assert!(g.coeff(&key).norm() > 1e-3);
    let bk = nls::birkhoff_transform(&m, 2).unwrap();
    assert!(bk.h.coeff(&key).norm() <= 1e-12);
    assert!(nls::max_eliminated_quartic(&bk.h) <= 1e-12);
}

#[test]
fn gbar_matches_closed_form_on_all_pairs() {
    let bk = nls::birkhoff_transform(&model(8), 2).unwrap();
    assert_eq!(bk.gbar.len(), 45);
    for (&(i, j), &g) in &bk.gbar {
        let want = if i == 0 || j == 0 { 1.0 / (8.0 * PI) } else { (2.0 + if i == j { 1.0 } else { 0.0 }) / (16.0 * PI) };
        assert!((g / want - 1.0).abs() < 1e-12, "Gbar({i},{j}) = {g}");
        // the raw tensor is four times the read-out coefficient
        assert!((quad(i, i, j, j) / g - 4.0).abs() < 1e-12);
    }
    let (c, spread) = nls::gbar_pattern(&bk.gbar);
    assert!((c - 1.0).abs() < 1e-12);
    assert!(spread <= 1e-10);
}

#[test]
fn gbar_collects_into_mass_square() {
    let m = model(6);
    let bk = nls::birkhoff_transform(&m, 2).unwrap();
    let d = m.birkhoff_dims().unwrap();
    let b = Budgets { d_max: 8, k_max: 0, prune_tol: 0.0 };
    let action = |j: u32| TFSeries::from_terms(d.clone(), b, [(d.key().z(j, 1).zb(j, 1).build(), C64::new(1.0, 0.0))]);
    let mut lhs = TFSeries::new(d.clone(), b);
    for (&(i, j), &g) in &bk.gbar {
        let mult = if i == j { 1.0 } else { 2.0 };
        lhs.axpy(C64::new(mult * g, 0.0), &action(i).mul(&action(j)).unwrap()).unwrap();
    }
    let mut mass = TFSeries::new(d.clone(), b);
    let mut rhs = TFSeries::new(d.clone(), b);
    for &j in d.slots() {
        mass.axpy(C64::new(1.0, 0.0), &action(j)).unwrap();
        if j >= 1 {
            rhs.axpy(C64::new(1.0 / (16.0 * PI), 0.0), &action(j).mul(&action(j)).unwrap()).unwrap();
        }
    }
    rhs.axpy(C64::new(1.0 / (8.0 * PI), 0.0), &mass.mul(&mass).unwrap()).unwrap();
    let diff = lhs.sub(&rhs).unwrap();
    assert!(diff.max_abs() < 1e-12, "{}", diff.max_abs());
    assert_eq!(lhs.len(), rhs.len());
}

#[test]
fn sextic_terms_obey_cosine_selection() {
    let bk = nls::birkhoff_transform(&model(6), 2).unwrap();
    let d = bk.h.dims().clone();
    let mut sextic = 0;
    for (key, c) in bk.h.terms() {
        if key.z_degree() >= 6 && c.norm() > 1e-15 {
            sextic += 1;
            assert_eq!(key.z_degree() % 2, 0);
            assert!(nls::cosine_selection(&d, key), "{key:?}");
        }
    }
    assert!(sextic > 0);
}

#[test]
fn quartic_coupling_breaks_momentum_in_cosine_basis() {
    let m = model(6);
    let d = m.birkhoff_dims().unwrap();
    assert!(nls::g_tensor(2, 2, 1, 1) > 0.0);
    let key = d.key().z(2, 2).zb(1, 2).build();
    assert_eq!(nls::momentum(&d, &key), 2);
    assert!(nls::cosine_selection(&d, &key));
    let g = nls::quartic_series(&d, kam_budgets());
    assert!(!nls::momentum_violations(&g, 1e-15).is_empty());
}

#[test]
fn frequency_map_closed_form() {
    let m = model(8);
    let (bk, kf) = nls::build(&m, kam_budgets()).unwrap();
    assert_eq!(kf.alpha, vec![1.0, 4.0]);
    let caa = 3.0 / (16.0 * PI);
    let cab = 1.0 / (2.0 * PI);
    let want = [[2.0 * caa, cab], [cab, 2.0 * caa]];
    for p in 0..2 {
        for q in 0..2 {
            assert!((kf.a_matrix[p][q] - want[p][q]).abs() < 1e-12);
        }
        let w = kf.alpha[p] + (0..2).map(|q| want[p][q] * m.xi[q]).sum::<f64>();
        assert!((kf.n0.omega[p] - w).abs() < 1e-14);
    }
    // ∂/∂ξ of the action polynomial Σ c_ab ξ_a ξ_b by central differences
    let d = bk.h.dims();
    let poly = |xi: &[f64]| -> f64 {
        let mut s = 0.0;
        for (&(i, j), &g) in &bk.gbar {
            let (si, sj) = (m.sites.iter().position(|&v| v == i), m.sites.iter().position(|&v| v == j));
            if let (Some(a), Some(b)) = (si, sj) {
                let c = bk.h.coeff(&d.key().z(i, 1).zb(i, 1).z(j, 1).zb(j, 1).build()).re;
                assert!((c - if i == j { g } else { 4.0 * g }).abs() < 1e-15);
                s += c * xi[a] * xi[b];
            }
        }
        s
    };
    let h = 1e-5;
    for p in 0..2 {
        let mut up = m.xi.clone();
        let mut dn = m.xi.clone();
        up[p] += h;
        dn[p] -= h;
        let fd = (poly(&up) - poly(&dn)) / (2.0 * h);
        let ana: f64 = (0..2).map(|q| kf.a_matrix[p][q] * m.xi[q]).sum();
        assert!((fd - ana).abs() < 1e-12);
    }
}

// `|z| ~ √ξ`, `|y| ~ ξ`: the domain radius follows the actions.
#[test]
fn halving_actions_shrinks_remainder() {
    let norm_at = |xi: Vec<f64>| {
        let dp = DomainParams { s: 1.0, r: xi.iter().sum::<f64>().sqrt(), a: 0.1, p: 1.0 };
        let (_, kf) = nls::build(&NlsModel::new(vec![1, 2], xi, 6, 2).unwrap(), kam_budgets()).unwrap();
        kf.r.vector_field_norm(&dp)
    };
    let na = norm_at(vec![0.001, 0.0017]);
    let nb = norm_at(vec![0.0005, 0.00085]);
    assert!(na > 0.0);
    assert!(na / nb >= 2.0, "{na} / {nb}");
}

#[test]
fn initial_remainder_parities() {
    let (_, kf) = nls::build(&model(6), kam_budgets()).unwrap();
    let r = &kf.r;
    let d = r.dims();
    let p = step_parity(0, r, 1e-15);
    assert_eq!((p.even_k_blocks, p.odd_k_blocks, p.zero_mode_linear), (0, 0, 0));
    assert_eq!(p.zero_mode_mean, 0.0);
    assert!(r.terms().keys().all(|k| nls::reflection_parity(d, k) == 0));
    assert!(!kf.taylor_tail.is_empty());

    let mut bad = r.clone();
    bad.add_term(d.key().k(&[1, 1]).z(0, 1).build(), C64::new(1e-6, 0.0));
    assert_eq!(nls::parity_check(&bad, ParityKind::EvenKBlocks, 1e-15).len(), 1);
    let key = d.key().k(&[1, 1]).z(0, 1).build();
    assert_eq!(nls::reflection_parity(d, &key), 1);

    let mean = inject_zero_mode_term(r, C64::new(1e-9, 0.0)).unwrap();
    assert_eq!(nls::parity_check(&mean, ParityKind::ZeroModeLinear, 1e-15).len(), 2);
    assert_eq!(step_parity(0, &mean, 1e-12).zero_mode_mean, 1e-9);
}

fn brute_zero_sum(families: &[IndexFamily], n: usize) -> bool {
    fn go(fams: &[Vec<Vec<i32>>], acc: Vec<i32>) -> bool {
        match fams.split_first() {
            None => acc.iter().all(|&v| v == 0),
            Some((f, rest)) => f.iter().any(|m| go(rest, acc.iter().zip(m).map(|(a, b)| a + b).collect())),
        }
    }
    let members: Vec<Vec<Vec<i32>>> = families.iter().map(|f| f.members(n)).collect();
    go(&members, vec![0; n])
}

#[test]
fn index_pairing_agrees_with_enumeration() {
    let cases: Vec<Vec<IndexFamily>> = vec![
        vec![IndexFamily::v1(), IndexFamily::v2()],
        vec![IndexFamily::v3(), IndexFamily::v4(), IndexFamily::v4()],
        vec![IndexFamily::zero(), IndexFamily::zero()],
        vec![IndexFamily::v2(), IndexFamily::v2()],
    ];
    for fams in &cases {
        for n in 1..=4 {
            let brute = brute_zero_sum(fams, n);
            if !nls::index_solvability(fams) {
                assert!(!brute, "{:?} n={n}", fams.iter().map(|f| &f.name).collect::<Vec<_>>());
            }
        }
    }
    assert!(nls::index_solvability(&[IndexFamily::zero(), IndexFamily::zero()]));
    assert!(brute_zero_sum(&[IndexFamily::zero(), IndexFamily::zero()], 3));
    assert!(brute_zero_sum(&[IndexFamily::v2(), IndexFamily::v2()], 2));
}

#[test]
fn rejects_bad_models() {
    assert!(NlsModel::new(vec![1, 2], vec![0.1, -0.1], 8, 2).is_err());
    assert!(NlsModel::new(vec![2, 1], vec![0.1, 0.1], 8, 2).is_err());
    assert!(NlsModel::new(vec![1, 9], vec![0.1, 0.1], 8, 2).is_err());
    assert!(NlsModel::new(vec![1], vec![0.1, 0.1], 8, 2).is_err());
}
