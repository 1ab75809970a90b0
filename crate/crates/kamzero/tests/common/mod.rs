#![allow(dead_code)]

use std::sync::Arc;

use kamzero::{Budgets, Dims, NormalForm, TFSeries, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two angles, sites {1, 2}, zero mode 0, normal modes 3..=6.
pub fn dims() -> Arc<Dims> {
    Dims::new(2, &[1, 2], &[0], 6).unwrap()
}

pub fn budgets(d_max: u32) -> Budgets {
    Budgets { d_max, k_max: 64, prune_tol: 0.0 }
}

/// `(k₁, k₂, y-slot or 0, z-factors as (slot, barred), re, im)`.
pub type RawTerm = (i32, i32, u8, Vec<(usize, bool)>, f64, f64);

pub fn raw_term(max_z: usize) -> impl Strategy<Value = RawTerm> {
    (-2i32..=2, -2i32..=2, 0u8..3, prop::collection::vec((0usize..5, any::<bool>()), 0..=max_z), -1.0f64..1.0, -1.0f64..1.0)
}

/// Builds a series from raw terms, skipping those outside `[min_deg, max_deg]`.
pub fn series_from(d: &Arc<Dims>, b: Budgets, raw: &[RawTerm], min_deg: u32, max_deg: u32) -> TFSeries {
    let mut s = TFSeries::new(d.clone(), b);
    for (k0, k1, y, zs, re, im) in raw {
        let mut key = d.key().k(&[*k0, *k1]).build();
        if *y > 0 {
            key.alpha[(*y - 1) as usize] += 1;
        }
        for &(slot, bar) in zs {
            if bar {
                key.gamma[slot] += 1;
            } else {
                key.beta[slot] += 1;
            }
        }
        if key.degree() < min_deg || key.degree() > max_deg {
            continue;
        }
        s.add_term(key, C64::new(*re, *im));
    }
    s
}

pub fn series(min_deg: u32, max_deg: u32, b: Budgets) -> impl Strategy<Value = TFSeries> {
    prop::collection::vec(raw_term(max_deg as usize), 1..8).prop_map(move |raw| series_from(&dims(), b, &raw, min_deg, max_deg))
}

/// Seeded random series for the acceptance and integration loops.
pub fn random_series(rng: &mut ChaCha8Rng, d: &Arc<Dims>, b: Budgets, terms: usize, max_deg: u32) -> TFSeries {
    let ns = d.nslots();
    let raw: Vec<RawTerm> = (0..terms)
        .map(|_| {
            let nz = rng.gen_range(0..=max_deg as usize);
            let zs = (0..nz).map(|_| (rng.gen_range(0..ns), rng.gen())).collect();
            (rng.gen_range(-2..=2), rng.gen_range(-2..=2), rng.gen_range(0..3), zs, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
        .collect();
    series_from(d, b, &raw, 0, max_deg)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn crandn(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// The diagonal solution `F = R/(i d)`, `d = ⟨k,ω⟩ + Σ Ω_j(β_j − γ_j)`, with
/// vanishing divisors collected in `N̂`.
pub fn diagonal_oracle(n: &NormalForm, r: &TFSeries) -> (TFSeries, TFSeries) {
    let d = r.dims().clone();
    let mut f = TFSeries::new(d.clone(), r.budgets());
    let mut nhat = TFSeries::new(d.clone(), r.budgets());
    for (key, &c) in r.terms() {
        let div = n.kappa(&key.k) + (0..d.nslots()).map(|s| n.omega_of(d.mode(s)) * (key.beta[s] as f64 - key.gamma[s] as f64)).sum::<f64>();
        if div == 0.0 {
            nhat.add_term(key.clone(), c);
        } else {
            f.add_term(key.clone(), c / (C64::new(0.0, 1.0) * div));
        }
    }
    (f, nhat)
}
