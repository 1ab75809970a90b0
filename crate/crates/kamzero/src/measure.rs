//! Grid estimates of the parameter measure removed by the small-divisor
//! conditions, compared with slab bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::homological::{enumerate_k, family_a, family_c, k_pow, l_vectors, l_weight, Family, NormalForm};
use crate::kam::KamParams;
use crate::matrix::det_modulus;
use crate::series::Dims;

/// Cell-centred tensor grid over a box in `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub samples: Vec<usize>,
}

impl ParameterGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, samples: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != samples.len() || lo.is_empty() {
            return Err(KamError::DimensionMismatch("grid axes disagree".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(KamError::Domain("grid box has an empty side".into()));
        }
        if samples.iter().any(|&s| s < 2) {
            return Err(KamError::Domain("at least two samples per axis".into()));
        }
        Ok(ParameterGrid { lo, hi, samples })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.samples.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `idx` in row-major order (last axis fastest).
    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        for ax in (0..self.dim()).rev() {
            let s = self.samples[ax];
            let i = idx % s;
            idx /= s;
            p[ax] = self.lo[ax] + (i as f64 + 0.5) * (self.hi[ax] - self.lo[ax]) / s as f64;
        }
        p
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
    }

    /// `Σ_axis 1/samples`.
    pub fn resolution_error(&self) -> f64 {
        self.samples.iter().map(|&s| 1.0 / s as f64).sum()
    }

    fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n).map(|mask| (0..n).map(|a| if mask >> a & 1 == 1 { self.hi[a] } else { self.lo[a] }).collect()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyStat {
    pub family: Family,
    pub excluded: usize,
    pub fraction: f64,
    pub analytic_bound: f64,
    pub ratio: Option<f64>,
    /// Empirical fraction above the bound by more than the resolution error.
    pub exceeds_bound: bool,
}

/// One CSV row: exclusion attributed to a single Fourier index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub family: Family,
    pub k: Vec<i32>,
    pub threshold: f64,
    pub excluded_fraction: f64,
    pub analytic_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub samples: usize,
    pub gamma: f64,
    pub kcut: u32,
    pub families: Vec<FamilyStat>,
    /// Fraction of samples violating any evaluated family.
    pub union_fraction: f64,
    pub resolution_error: f64,
    /// Largest finite-difference quotient `|Δω|/|Δξ|` across neighbouring samples.
    pub lipschitz_omega: f64,
    pub rows: Vec<KRow>,
}

/// Divisors at one sample: which families fail, and at which `k`.
fn sample_failures(nf: &NormalForm, modes: &[u32], lv: &[Vec<(u32, i32)>], ks: &[Vec<i32>], params: &KamParams, families: &[Family]) -> Vec<(Family, usize)> {
    let mut out = Vec::new();
    let b = nf.b();
    for (ki, k) in ks.iter().enumerate() {
        let kzero = k.iter().all(|&v| v == 0);
        let kappa = nf.kappa(k);
        let kp = k_pow(k, params.base.tau);
        for &fam in families {
            let fail = match fam {
                Family::KL => {
                    (!kzero && kappa.abs() < params.gamma / kp)
                        || lv.iter().any(|l| {
                            let d = kappa + l.iter().map(|&(j, m)| m as f64 * nf.omega_of(j)).sum::<f64>();
                            d.abs() < params.gamma * l_weight(l) / kp
                        })
                }
                Family::R1 if b > 0 && !kzero => {
                    det_modulus(&family_a(nf, kappa)).unwrap_or(0.0) < params.gamma_i(Family::R1) / k_pow(k, params.tau_i(Family::R1))
                }
                Family::R4 if b > 0 && !kzero => {
                    det_modulus(&family_c(nf, kappa, 0.0)).unwrap_or(0.0) < params.gamma_i(Family::R4) / k_pow(k, params.tau_i(Family::R4))
                }
                Family::R3 if b > 0 => {
                    let thr = params.gamma_i(Family::R3) / k_pow(k, params.tau_i(Family::R3));
                    modes.iter().any(|&j| {
                        [1.0, -1.0].iter().any(|&s| det_modulus(&family_c(nf, kappa, s * nf.omega_of(j))).unwrap_or(0.0) < thr)
                    })
                }
                _ => false,
            };
            if fail {
                out.push((fam, ki));
            }
        }
    }
    out
}

/// Jacobian `∂ω/∂ξ` by central differences at `xi`.
pub fn omega_jacobian<F: Fn(&[f64]) -> NormalForm>(nf_at: &F, xi: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = xi.len();
    let m = nf_at(xi).omega.len();
    let mut jac = vec![vec![0.0; n]; m];
    for c in 0..n {
        let mut p = xi.to_vec();
        let mut q = xi.to_vec();
        p[c] += h;
        q[c] -= h;
        let (wp, wq) = (nf_at(&p).omega, nf_at(&q).omega);
        for r in 0..m {
            jac[r][c] = (wp[r] - wq[r]) / (2.0 * h);
        }
    }
    jac
}

/// Slab measure bound for one divisor family at one `k`, as a fraction of
/// the grid volume.  `dim` is the order of the determinant (1 for KL).
fn slab_fraction(grid: &ParameterGrid, grad: f64, thr: f64, dim: usize) -> f64 {
    if grad == 0.0 {
        return 1.0;
    }
    let d = dim as f64;
    let fact: f64 = (1..=dim).map(|i| i as f64).product();
    let width = if dim == 1 { 2.0 * thr / grad } else { 2.0 * d * (2.0 * thr / fact).powf(1.0 / d) / grad };
    (width * grid.diameter().powi(grid.dim() as i32 - 1) / grid.volume()).min(1.0)
}

/// Excluded fraction per family on the grid at step parameters `params`,
/// for `|k| ≤ kcut`.
pub fn estimate_excluded<F>(grid: &ParameterGrid, dims: &Dims, nf_at: F, params: &KamParams, kcut: u32, families: &[Family]) -> Result<MeasureReport>
where
    F: Fn(&[f64]) -> NormalForm + Sync,
{
    if grid.is_empty() {
        return Err(KamError::Domain("empty parameter grid".into()));
    }
    if grid.dim() != dims.n() {
        return Err(KamError::DimensionMismatch(format!("grid of dimension {} for n = {}", grid.dim(), dims.n())));
    }
    let modes = dims.normal_modes();
    let lv = l_vectors(&modes);
    let ks = enumerate_k(dims.n(), kcut);
    let total = grid.len();
    let fails: Vec<Vec<(Family, usize)>> = (0..total)
        .into_par_iter()
        .map(|i| sample_failures(&nf_at(&grid.point(i)), &modes, &lv, &ks, params, families))
        .collect();

    let center: Vec<f64> = grid.lo.iter().zip(&grid.hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let jac = omega_jacobian(&nf_at, &center, 1e-6 * grid.diameter());
    let nf_c = nf_at(&center);
    let corners: Vec<NormalForm> = grid.corners().iter().map(|c| nf_at(c)).collect();

    let mut rows = Vec::new();
    let mut stats = Vec::new();
    let b = dims.b();
    for &fam in families {
        let excluded = fails.iter().filter(|f| f.iter().any(|(g, _)| *g == fam)).count();
        let mut bound_total = 0.0;
        for (ki, k) in ks.iter().enumerate() {
            let count = fails.iter().filter(|f| f.iter().any(|&(g, kk)| g == fam && kk == ki)).count();
            let grad = (0..dims.n()).map(|c| (0..k.len()).map(|r| k[r] as f64 * jac[r][c]).sum::<f64>().powi(2)).sum::<f64>().sqrt();
            let kzero = k.iter().all(|&v| v == 0);
            let canonical = k.iter().find(|&&v| v != 0).is_none_or(|&v| v > 0);
            let (thr, dim) = match fam {
                Family::KL => (params.gamma / k_pow(k, params.base.tau), 1),
                f => (params.gamma_i(f) / k_pow(k, params.tau_i(f)), match f {
                    Family::R1 => 3 * b * b,
                    Family::R3 => 2 * b,
                    _ => 2 * b,
                }),
            };
            let mut bound = 0.0;
            if canonical && (fam == Family::KL || b > 0) {
                let shifts: Vec<(f64, f64)> = match fam {
                    Family::KL => {
                        let mut v: Vec<(f64, f64)> = lv
                            .iter()
                            .filter(|l| !kzero || l.first().is_some_and(|&(_, m)| m > 0))
                            .map(|l| (l.iter().map(|&(j, m)| m as f64 * nf_c.omega_of(j)).sum::<f64>(), l_weight(l)))
                            .collect();
                        if !kzero {
                            v.push((0.0, 1.0));
                        }
                        v
                    }
                    Family::R3 => modes.iter().flat_map(|&j| [(nf_c.omega_of(j), 1.0), (-nf_c.omega_of(j), 1.0)]).collect(),
                    _ if kzero => Vec::new(),
                    _ => vec![(0.0, 1.0)],
                };
                for (shift, lw) in shifts {
                    let t = thr * lw;
                    let vals: Vec<f64> = corners.iter().map(|c| c.kappa(k) + shift).collect();
                    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let reach = if dim == 1 { t } else { (t * 2.0).powf(1.0 / dim as f64) * dim as f64 };
                    if lo - reach <= 0.0 && hi + reach >= 0.0 {
                        bound += slab_fraction(grid, grad, t, dim);
                    }
                }
            }
            let bound = bound.min(1.0);
            bound_total += bound;
            if count > 0 || bound > 0.0 {
                rows.push(KRow { family: fam, k: k.clone(), threshold: thr, excluded_fraction: count as f64 / total as f64, analytic_bound: bound });
            }
        }
        let fraction = excluded as f64 / total as f64;
        let bound_total = bound_total.min(1.0);
        stats.push(FamilyStat {
            family: fam,
            excluded,
            fraction,
            analytic_bound: bound_total,
            ratio: (bound_total > 0.0).then(|| fraction / bound_total),
            exceeds_bound: fraction > bound_total + grid.resolution_error(),
        });
    }
    let union = fails.iter().filter(|f| !f.is_empty()).count() as f64 / total as f64;
    let lipschitz = lipschitz_omega(grid, &nf_at);
    Ok(MeasureReport {
        samples: total,
        gamma: params.gamma,
        kcut,
        families: stats,
        union_fraction: union,
        resolution_error: grid.resolution_error(),
        lipschitz_omega: lipschitz,
        rows,
    })
}

fn lipschitz_omega<F: Fn(&[f64]) -> NormalForm>(grid: &ParameterGrid, nf_at: &F) -> f64 {
    let mut best: f64 = 0.0;
    let step = grid.len().div_ceil(64).max(1);
    for i in (0..grid.len()).step_by(step) {
        let p = grid.point(i);
        let w = nf_at(&p).omega;
        for ax in 0..grid.dim() {
            let mut q = p.clone();
            q[ax] += (grid.hi[ax] - grid.lo[ax]) / grid.samples[ax] as f64;
            let wq = nf_at(&q).omega;
            let dw = w.iter().zip(&wq).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            best = best.max(dw / (q[ax] - p[ax]));
        }
    }
    best
}
