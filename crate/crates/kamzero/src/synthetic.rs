//! Seeded random perturbations of a Diophantine normal form, used for
//! contraction and dichotomy experiments.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::homological::NormalForm;
use crate::matrix::DenseMatrix;
use crate::series::{Budgets, Dims, DomainParams, MonomialKey, TFSeries, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub zero_modes: Vec<u32>,
    pub jmax: u32,
    pub eps0: f64,
    pub seed: u64,
    /// Largest `|k|` in the random perturbation.
    pub k_support: u32,
    pub terms: usize,
    /// Size of the entries of the quadratic zero-mode blocks.
    pub block_scale: f64,
    /// Keep `k = 0` terms linear in the zero modes.
    pub zero_mode_mean: bool,
    pub budgets: Budgets,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 2,
            zero_modes: vec![0],
            jmax: 8,
            eps0: 1e-6,
            seed: 7,
            k_support: 3,
            terms: 40,
            block_scale: 1e-3,
            zero_mode_mean: false,
            budgets: Budgets { d_max: 4, k_max: 64, prune_tol: 1e-16 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    pub dims: Arc<Dims>,
    pub n0: NormalForm,
    pub r0: TFSeries,
}

/// `(1, φ, √2, √3, √5, …)`.
pub fn tangential_frequencies(n: usize) -> Vec<f64> {
    let extra = [2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0];
    let mut w = vec![1.0, (1.0 + 5f64.sqrt()) / 2.0];
    w.extend(extra.iter().map(|p| p.sqrt()));
    w.truncate(n);
    w
}

/// `Ω_j = j² + (√3/10) j`.
pub fn normal_frequency(j: u32) -> f64 {
    let j = j as f64;
    j * j + 0.1 * 3f64.sqrt() * j
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn random_k(rng: &mut ChaCha8Rng, n: usize, kmax: u32) -> Vec<i32> {
    loop {
        let k: Vec<i32> = (0..n).map(|_| rng.gen_range(-(kmax as i32)..=kmax as i32)).collect();
        if k.iter().map(|v| v.unsigned_abs()).sum::<u32>() <= kmax {
            return k;
        }
    }
}

/// The normal form with the given frequencies and small random blocks, and
/// a real random perturbation with `‖X_R‖ = ε₀` on `D(s, r)`.
pub fn build(spec: &SyntheticSpec, dp: &DomainParams) -> Result<SyntheticProblem> {
    if spec.n == 0 || spec.n > 8 {
        return Err(KamError::Domain(format!("synthetic n = {} outside 1..=8", spec.n)));
    }
    if !(spec.eps0 > 0.0) {
        return Err(KamError::Domain("eps0 must be positive".into()));
    }
    let dims = Dims::new(spec.n, &[], &spec.zero_modes, spec.jmax)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut n0 = NormalForm::with_frequencies(&dims, &tangential_frequencies(spec.n), normal_frequency)?;
    let b = dims.b();
    let mut herm = DenseMatrix::zeros(b, b);
    let mut sym = DenseMatrix::zeros(b, b);
    for i in 0..b {
        for l in i..b {
            let h = C64::new(gauss(&mut rng), if i == l { 0.0 } else { gauss(&mut rng) }) * spec.block_scale;
            herm[(i, l)] = h;
            herm[(l, i)] = h.conj();
            let s = C64::new(gauss(&mut rng), gauss(&mut rng)) * spec.block_scale;
            sym[(i, l)] = s;
            sym[(l, i)] = s;
        }
    }
    n0.nz0zb0 = herm;
    n0.nzb0zb0 = sym.conj();
    n0.nz0z0 = sym;

    let slots: Vec<u32> = dims.slots().iter().copied().filter(|&j| j <= 3).collect();
    let zeros: Vec<u32> = dims.zero_modes().to_vec();
    let mut r = TFSeries::new(dims.clone(), spec.budgets);
    let pick = |rng: &mut ChaCha8Rng| slots[rng.gen_range(0..slots.len())];
    for t in 0..spec.terms {
        let k = random_k(&mut rng, spec.n, spec.k_support);
        let mut key: MonomialKey = dims.key().k(&k).build();
        match rng.gen_range(0..8) {
            0 => key.alpha[rng.gen_range(0..spec.n)] += 1,
            1 => key.beta[dims.slot(pick(&mut rng)).unwrap()] += 1,
            2 => {
                key.beta[dims.slot(pick(&mut rng)).unwrap()] += 1;
                key.gamma[dims.slot(pick(&mut rng)).unwrap()] += 1;
            }
            3 => {
                key.beta[dims.slot(pick(&mut rng)).unwrap()] += 1;
                key.beta[dims.slot(pick(&mut rng)).unwrap()] += 1;
            }
            4 => {
                key.alpha[rng.gen_range(0..spec.n)] += 1;
                key.beta[dims.slot(pick(&mut rng)).unwrap()] += 1;
            }
            5 => {
                for _ in 0..3 {
                    key.beta[dims.slot(pick(&mut rng)).unwrap()] += 1;
                }
            }
            6 => {
                key.beta[dims.slot(pick(&mut rng)).unwrap()] += 2;
                key.gamma[dims.slot(pick(&mut rng)).unwrap()] += 1;
            }
            _ => {
                // every zero mode appears linearly at least once
                let j = zeros.get(t % zeros.len().max(1)).copied().unwrap_or_else(|| pick(&mut rng));
                key.gamma[dims.slot(j).unwrap()] += 1;
            }
        }
        if key.degree() == 0 {
            continue;
        }
        r.add_term(key, C64::new(gauss(&mut rng), gauss(&mut rng)));
    }
    let zslots = dims.zero_slots();
    let mut r = r
        .realify()
        .filter(|k, _| spec.zero_mode_mean || !(k.k_is_zero() && k.degree() == 1 && zslots.iter().any(|&s| k.beta[s] + k.gamma[s] == 1)));
    r.mark_real(1e-15);
    let norm = r.vector_field_norm(dp);
    if norm == 0.0 {
        return Err(KamError::Domain("empty random perturbation".into()));
    }
    let mut r0 = r.scale(C64::new(spec.eps0 / norm, 0.0));
    r0.mark_real(1e-15);
    Ok(SyntheticProblem { dims, n0, r0 })
}

/// Adds `c·z₀ + c̄·z̄₀` at `k = 0` for the first zero mode.
pub fn inject_zero_mode_term(r: &TFSeries, c: C64) -> Result<TFSeries> {
    let dims = r.dims().clone();
    let j = *dims.zero_modes().first().ok_or_else(|| KamError::Domain("no zero-frequency mode".into()))?;
    let mut out = r.clone();
    let real = r.is_real();
    out.add_term(dims.key().z(j, 1).build(), c);
    out.add_term(dims.key().zb(j, 1).build(), c.conj());
    if real {
        out.mark_real(1e-15);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp() -> DomainParams {
        DomainParams { s: 0.75, r: 0.1, a: 0.1, p: 1.0 }
    }

    #[test]
    fn scaled_to_eps0_and_real() {
        let p = build(&SyntheticSpec::default(), &dp()).unwrap();
        assert!((p.r0.vector_field_norm(&dp()) / 1e-6 - 1.0).abs() < 1e-12);
        assert!(p.r0.is_real());
        assert!(p.r0.reality_defect() < 1e-20);
    }

    #[test]
    fn seed_determines_problem() {
        let a = build(&SyntheticSpec::default(), &dp()).unwrap();
        let b = build(&SyntheticSpec::default(), &dp()).unwrap();
        assert_eq!(a.r0.terms(), b.r0.terms());
        let c = build(&SyntheticSpec { seed: 8, ..SyntheticSpec::default() }, &dp()).unwrap();
        assert_ne!(a.r0.terms(), c.r0.terms());
    }

    #[test]
    fn no_zero_mode_mean_by_default() {
        let p = build(&SyntheticSpec::default(), &dp()).unwrap();
        let d = &p.dims;
        assert_eq!(p.r0.coeff(&d.key().z(0, 1).build()), C64::new(0.0, 0.0));
    }
}
