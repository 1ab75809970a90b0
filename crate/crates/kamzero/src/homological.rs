//! Normal forms, non-resonance conditions and the homological equation
//! `{N, F} + R_low = N̂`, solved Fourier mode by Fourier mode.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::kam::KamParams;
use crate::matrix::{self, commutation, kron, unvec, vec, DenseMatrix};
use crate::series::{Budgets, DomainParams, Dims, KVec, MonomialKey, TFSeries, C64, I};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Systems whose condition number exceeds this are treated as resonant.
pub const COND_GUARD: f64 = 1e12;

/// The structured normal form
/// `N = N^x + ⟨ω,y⟩ + Σ Ω_j |z_j|² + ⟨N^{z₀},z₀⟩ + ⟨N^{z̄₀},z̄₀⟩
///    + ⟨N^{z₀z₀}z₀,z₀⟩ + ⟨N^{z₀z̄₀}z₀,z̄₀⟩ + ⟨N^{z̄₀z̄₀}z̄₀,z̄₀⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalForm {
    pub nx: C64,
    pub omega: Vec<f64>,
    /// Normal frequencies keyed by mode.
    pub big_omega: BTreeMap<u32, f64>,
    pub nz0: Vec<C64>,
    pub nzb0: Vec<C64>,
    pub nz0z0: DenseMatrix,
    pub nz0zb0: DenseMatrix,
    pub nzb0zb0: DenseMatrix,
}

impl NormalForm {
    /// All blocks zero, `Ω_j = 0`.
    pub fn zero(dims: &Dims) -> Self {
        let b = dims.b();
        NormalForm {
            nx: ZERO,
            omega: vec![0.0; dims.n()],
            big_omega: dims.normal_modes().into_iter().map(|j| (j, 0.0)).collect(),
            nz0: vec![ZERO; b],
            nzb0: vec![ZERO; b],
            nz0z0: DenseMatrix::zeros(b, b),
            nz0zb0: DenseMatrix::zeros(b, b),
            nzb0zb0: DenseMatrix::zeros(b, b),
        }
    }

    pub fn with_frequencies(dims: &Dims, omega: &[f64], big_omega: impl Fn(u32) -> f64) -> Result<Self> {
        if omega.len() != dims.n() {
            return Err(KamError::DimensionMismatch(format!("{} tangential frequencies for n = {}", omega.len(), dims.n())));
        }
        let mut nf = Self::zero(dims);
        nf.omega = omega.to_vec();
        for (j, v) in nf.big_omega.iter_mut() {
            *v = big_omega(*j);
        }
        Ok(nf)
    }

    pub fn b(&self) -> usize {
        self.nz0.len()
    }

    pub fn omega_of(&self, mode: u32) -> f64 {
        self.big_omega.get(&mode).copied().unwrap_or(0.0)
    }

    /// `⟨k, ω⟩`.
    pub fn kappa(&self, k: &[i32]) -> f64 {
        k.iter().zip(&self.omega).map(|(&a, w)| a as f64 * w).sum()
    }

    /// Whether all three z₀ quadratic blocks vanish.
    pub fn has_zero_blocks(&self) -> bool {
        [&self.nz0z0, &self.nz0zb0, &self.nzb0zb0].iter().all(|m| m.data().iter().all(|c| *c == ZERO))
    }

    /// Adds the increment `dn` blockwise.
    pub fn add(&self, dn: &NormalForm) -> Result<NormalForm> {
        if self.omega.len() != dn.omega.len() || self.b() != dn.b() {
            return Err(KamError::DimensionMismatch("normal forms of different shape".into()));
        }
        let mut out = self.clone();
        out.nx += dn.nx;
        out.omega.iter_mut().zip(&dn.omega).for_each(|(a, b)| *a += b);
        for (j, v) in &dn.big_omega {
            *out.big_omega.entry(*j).or_insert(0.0) += v;
        }
        out.nz0.iter_mut().zip(&dn.nz0).for_each(|(a, b)| *a += b);
        out.nzb0.iter_mut().zip(&dn.nzb0).for_each(|(a, b)| *a += b);
        out.nz0z0 = out.nz0z0.add(&dn.nz0z0)?;
        out.nz0zb0 = out.nz0zb0.add(&dn.nz0zb0)?;
        out.nzb0zb0 = out.nzb0zb0.add(&dn.nzb0zb0)?;
        Ok(out)
    }

    /// Expands into a series.  Off-diagonal symmetric entries contribute
    /// twice to `z_i z_l`.
    pub fn to_series(&self, dims: &Arc<Dims>, budgets: Budgets) -> TFSeries {
        let zs = dims.zero_modes().to_vec();
        let mut terms: Vec<(MonomialKey, C64)> = vec![(dims.key().build(), self.nx)];
        for (b, &w) in self.omega.iter().enumerate() {
            terms.push((dims.key().y(b, 1).build(), C64::new(w, 0.0)));
        }
        for (&j, &w) in &self.big_omega {
            terms.push((dims.key().z(j, 1).zb(j, 1).build(), C64::new(w, 0.0)));
        }
        for (i, &j) in zs.iter().enumerate() {
            terms.push((dims.key().z(j, 1).build(), self.nz0[i]));
            terms.push((dims.key().zb(j, 1).build(), self.nzb0[i]));
            for (l, &jl) in zs.iter().enumerate() {
                terms.push((dims.key().z(j, 1).z(jl, 1).build(), self.nz0z0[(i, l)]));
                terms.push((dims.key().zb(j, 1).zb(jl, 1).build(), self.nzb0zb0[(i, l)]));
                terms.push((dims.key().zb(j, 1).z(jl, 1).build(), self.nz0zb0[(i, l)]));
            }
        }
        let mut s = TFSeries::from_terms(dims.clone(), budgets, terms);
        s.mark_real(1e-14);
        s
    }

    /// Reads the `k = 0` normal-form shaped terms of `s`.  Real parts go to
    /// the frequencies; the largest discarded imaginary part is returned.
    pub fn from_means(dims: &Dims, s: &TFSeries) -> Result<(NormalForm, f64)> {
        let mut nf = NormalForm::zero(dims);
        let zslot: Vec<usize> = dims.zero_slots();
        let zpos = |slot: usize| zslot.iter().position(|&s| s == slot);
        let mut defect: f64 = 0.0;
        for (key, &c) in s.terms() {
            if !key.k_is_zero() {
                continue;
            }
            let ya = key.y_degree();
            let zd = key.z_degree();
            if ya == 0 && zd == 0 {
                nf.nx += c;
            } else if ya == 1 && zd == 0 {
                let b = key.alpha.iter().position(|&e| e == 1).unwrap();
                nf.omega[b] += c.re;
                defect = defect.max(c.im.abs());
            } else if ya == 0 && zd == 1 {
                let (slot, bar) = single_slot(key);
                let p = zpos(slot).ok_or_else(|| KamError::Internal("normal linear term among the means".into()))?;
                if bar {
                    nf.nzb0[p] += c;
                } else {
                    nf.nz0[p] += c;
                }
            } else if ya == 0 && zd == 2 {
                let vars = quad_vars(key);
                let ((s1, b1), (s2, b2)) = (vars[0], vars[1]);
                match (zpos(s1), zpos(s2)) {
                    (Some(i), Some(l)) => match (b1, b2) {
                        (false, false) => sym_add(&mut nf.nz0z0, i, l, c),
                        (true, true) => sym_add(&mut nf.nzb0zb0, i, l, c),
                        (false, true) => nf.nz0zb0[(l, i)] += c,
                        (true, false) => nf.nz0zb0[(i, l)] += c,
                    },
                    (None, None) if s1 == s2 && b1 != b2 => {
                        *nf.big_omega.get_mut(&dims.mode(s1)).unwrap() += c.re;
                        defect = defect.max(c.im.abs());
                    }
                    _ => return Err(KamError::Internal("non-normal-form term among the means".into())),
                }
            } else {
                return Err(KamError::Internal("high-degree term among the means".into()));
            }
        }
        Ok((nf, defect))
    }
}

fn sym_add(m: &mut DenseMatrix, i: usize, l: usize, c: C64) {
    if i == l {
        m[(i, i)] += c;
    } else {
        m[(i, l)] += c * 0.5;
        m[(l, i)] += c * 0.5;
    }
}

/// The slot and conjugation flag of a linear z-monomial.
fn single_slot(key: &MonomialKey) -> (usize, bool) {
    match key.beta.iter().position(|&e| e > 0) {
        Some(s) => (s, false),
        None => (key.gamma.iter().position(|&e| e > 0).unwrap(), true),
    }
}

/// The two (slot, conjugated) factors of a quadratic z-monomial, z-factors first.
fn quad_vars(key: &MonomialKey) -> Vec<(usize, bool)> {
    let mut v = Vec::with_capacity(2);
    for (s, &e) in key.beta.iter().enumerate() {
        for _ in 0..e {
            v.push((s, false));
        }
    }
    for (s, &e) in key.gamma.iter().enumerate() {
        for _ in 0..e {
            v.push((s, true));
        }
    }
    v
}

/// Non-resonance families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    KL,
    R1,
    R3,
    R4,
}

/// One evaluated small-divisor condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceCondition {
    pub family: Family,
    pub k: Vec<i32>,
    /// Normal multi-index as `(mode, multiplicity)` pairs.
    pub l: Option<Vec<(u32, i32)>>,
    /// Normal mode and sign for family R3.
    pub mode: Option<(u32, i8)>,
    pub threshold: f64,
    pub measured: f64,
    /// Condition number of the block system when it tripped the guard.
    pub cond: Option<f64>,
}

impl ResonanceCondition {
    pub fn violated(&self) -> bool {
        self.measured < self.threshold || self.cond.is_some_and(|c| c > COND_GUARD)
    }
    pub fn margin(&self) -> f64 {
        if self.threshold > 0.0 {
            self.measured / self.threshold
        } else {
            f64::INFINITY
        }
    }
}

impl fmt::Display for ResonanceCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at k = {:?}", self.family, self.k)?;
        if let Some(l) = &self.l {
            write!(f, ", l = {l:?}")?;
        }
        if let Some((j, s)) = self.mode {
            write!(f, ", j = {j} ({})", if s > 0 { '+' } else { '-' })?;
        }
        write!(f, ": measured {:e} vs threshold {:e}", self.measured, self.threshold)?;
        if let Some(c) = self.cond {
            write!(f, " (condition number {c:e})")?;
        }
        Ok(())
    }
}

/// `⟨l⟩_d = max(1, |Σ j^d l_j|)` with `d = 2`.
pub fn l_weight(l: &[(u32, i32)]) -> f64 {
    let s: f64 = l.iter().map(|&(j, m)| (j as f64).powi(2) * m as f64).sum();
    s.abs().max(1.0)
}

pub(crate) fn k_pow(k: &[i32], tau: f64) -> f64 {
    let kn: u32 = k.iter().map(|v| v.unsigned_abs()).sum();
    (kn.max(1) as f64).powf(tau)
}

/// Operator families of the block solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockFamily {
    A,
    B,
    C,
}

/// `i⟨k,ω⟩I + B_block` for the z₀ quadratic (A), mixed z₀/normal (B) and
/// z₀ linear (C) unknowns.  Family B stacks the `+Ω_j` and `−Ω_j` halves.
pub fn assemble_block_operator(family: BlockFamily, n: &NormalForm, k: &[i32], j: Option<u32>) -> Result<DenseMatrix> {
    let kappa = n.kappa(k);
    match family {
        BlockFamily::A => Ok(family_a(n, kappa)),
        BlockFamily::C => Ok(family_c(n, kappa, 0.0)),
        BlockFamily::B => {
            let j = j.ok_or_else(|| KamError::Domain("family B needs a normal mode".into()))?;
            let w = n.omega_of(j);
            let plus = family_c(n, kappa, w);
            let minus = family_c(n, kappa, -w);
            let h = plus.rows();
            let mut m = DenseMatrix::zeros(2 * h, 2 * h);
            m.set_block(0, 0, &plus);
            m.set_block(h, h, &minus);
            Ok(m)
        }
    }
}

/// Half of family B for the sign of `Ω_j`.
pub fn family_b_half(n: &NormalForm, k: &[i32], j: u32, sign: i8) -> DenseMatrix {
    family_c(n, n.kappa(k), sign as f64 * n.omega_of(j))
}

pub(crate) fn family_a(n: &NormalForm, kappa: f64) -> DenseMatrix {
    let b = n.b();
    let bb = b * b;
    let id = DenseMatrix::identity(b);
    let km = commutation(b, b);
    let (a, bm, c) = (&n.nz0z0, &n.nz0zb0, &n.nzb0zb0);
    let (at, bt, ct) = (a.transpose(), bm.transpose(), c.transpose());
    let four = C64::new(4.0, 0.0);
    let pp = kron(&id, &bt).add(&kron(&bt, &id)).unwrap();
    let pm = kron(&id, a).add(&kron(&at, &id).matmul(&km).unwrap()).unwrap().scale(-C64::new(1.0, 0.0));
    let mp = kron(&id, c).scale(four);
    let mm = kron(&bt, &id).sub(&kron(&id, bm)).unwrap();
    let ms = kron(&at, &id).scale(-four);
    let sm = kron(&ct, &id).add(&kron(&id, c).matmul(&km).unwrap()).unwrap();
    let ss = kron(bm, &id).add(&kron(&id, bm)).unwrap().scale(-C64::new(1.0, 0.0));
    let mut blk = DenseMatrix::zeros(3 * bb, 3 * bb);
    blk.set_block(0, 0, &pp);
    blk.set_block(0, bb, &pm);
    blk.set_block(bb, 0, &mp);
    blk.set_block(bb, bb, &mm);
    blk.set_block(bb, 2 * bb, &ms);
    blk.set_block(2 * bb, bb, &sm);
    blk.set_block(2 * bb, 2 * bb, &ss);
    DenseMatrix::identity(3 * bb).scale(I * kappa).add(&blk.scale(I)).unwrap()
}

/// `[[i(κ+w) + iBᵀ, −2iA], [2iC, i(κ+w) − iB]]`.
pub(crate) fn family_c(n: &NormalForm, kappa: f64, w: f64) -> DenseMatrix {
    let b = n.b();
    let mut m = DenseMatrix::zeros(2 * b, 2 * b);
    let d = I * (kappa + w);
    for r in 0..b {
        m[(r, r)] += d;
        m[(b + r, b + r)] += d;
        for c in 0..b {
            m[(r, c)] += I * n.nz0zb0[(c, r)];
            m[(r, b + c)] += -2.0 * I * n.nz0z0[(r, c)];
            m[(b + r, c)] += 2.0 * I * n.nzb0zb0[(r, c)];
            m[(b + r, b + c)] -= I * n.nz0zb0[(r, c)];
        }
    }
    m
}

/// Evaluates a block condition: determinant modulus against the threshold
/// and, when it passes, the condition-number guard.
fn block_condition(m: &DenseMatrix, family: Family, k: &[i32], mode: Option<(u32, i8)>, threshold: f64) -> ResonanceCondition {
    let measured = matrix::det_modulus(m).unwrap_or(0.0);
    let mut rc = ResonanceCondition { family, k: k.to_vec(), l: None, mode, threshold, measured, cond: None };
    if measured >= threshold {
        let c = matrix::cond(m);
        if c > COND_GUARD {
            rc.cond = Some(c);
        }
    }
    rc
}

fn kl_condition(n: &NormalForm, k: &[i32], l: Vec<(u32, i32)>, params: &KamParams) -> ResonanceCondition {
    let d = n.kappa(k) + l.iter().map(|&(j, m)| m as f64 * n.omega_of(j)).sum::<f64>();
    let threshold = params.gamma * l_weight(&l) / k_pow(k, params.base.tau);
    ResonanceCondition { family: Family::KL, k: k.to_vec(), l: Some(l), mode: None, threshold, measured: d.abs(), cond: None }
}

/// All normal multi-indices with `|l| ≤ 2`, excluding `l = 0`.
pub(crate) fn l_vectors(modes: &[u32]) -> Vec<Vec<(u32, i32)>> {
    let mut out = Vec::new();
    for (a, &i) in modes.iter().enumerate() {
        for s in [1, -1] {
            out.push(vec![(i, s)]);
            out.push(vec![(i, 2 * s)]);
        }
        for &j in &modes[a + 1..] {
            for (s, t) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
                out.push(vec![(i, s), (j, t)]);
            }
        }
    }
    out
}

/// Every `k` with `|k| ≤ kmax`, in lexicographic order.
pub fn enumerate_k(n: usize, kmax: u32) -> Vec<Vec<i32>> {
    fn rec(n: usize, left: i32, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for v in -left..=left {
            cur.push(v);
            rec(n, left - v.abs(), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, kmax as i32, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Evaluates conditions (1)–(4) at every given `k`; returns the violations.
pub fn check_nonresonance_on(n: &NormalForm, dims: &Dims, params: &KamParams, ks: &[Vec<i32>]) -> Vec<ResonanceCondition> {
    let modes = dims.normal_modes();
    let lv = l_vectors(&modes);
    let b = dims.b();
    ks.par_iter()
        .flat_map_iter(|k| {
            let mut fails = Vec::new();
            let kzero = k.iter().all(|&v| v == 0);
            if !kzero {
                let rc = kl_condition(n, k, Vec::new(), params);
                if rc.violated() {
                    fails.push(rc);
                }
            }
            for l in &lv {
                let rc = kl_condition(n, k, l.clone(), params);
                if rc.violated() {
                    fails.push(rc);
                }
            }
            if b > 0 {
                if !kzero {
                    let thr1 = params.gamma_i(Family::R1) / k_pow(k, params.tau_i(Family::R1));
                    let rc = block_condition(&family_a(n, n.kappa(k)), Family::R1, k, None, thr1);
                    if rc.violated() {
                        fails.push(rc);
                    }
                    let thr4 = params.gamma_i(Family::R4) / k_pow(k, params.tau_i(Family::R4));
                    let rc = block_condition(&family_c(n, n.kappa(k), 0.0), Family::R4, k, None, thr4);
                    if rc.violated() {
                        fails.push(rc);
                    }
                }
                let thr3 = params.gamma_i(Family::R3) / k_pow(k, params.tau_i(Family::R3));
                for &j in &modes {
                    for s in [1i8, -1] {
                        let rc = block_condition(&family_b_half(n, k, j, s), Family::R3, k, Some((j, s)), thr3);
                        if rc.violated() {
                            fails.push(rc);
                        }
                    }
                }
            }
            fails
        })
        .collect()
}

/// Evaluates conditions (1)–(4) for all `|k| ≤ min(K_m, K_max)`.
pub fn check_nonresonance(n: &NormalForm, dims: &Dims, params: &KamParams, k_max: u32) -> Vec<ResonanceCondition> {
    let kc = (params.kcut.floor().max(0.0) as u32).min(k_max);
    check_nonresonance_on(n, dims, params, &enumerate_k(dims.n(), kc))
}

/// Per-solve bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HomReport {
    /// Number of solves in Parts 1–6.
    pub part_counts: [usize; 6],
    /// Smallest measured/threshold ratio over all divisors used.
    pub min_margin: Option<f64>,
    pub residual: f64,
    pub xf_norm: f64,
    pub xr_norm: f64,
    /// `log10` of `‖X_F‖ / (γ^{−6} K^{(10b²+2)τ+10b²} σ^{−n−1} ‖X_R‖)`.
    pub log10_estimate_constant: Option<f64>,
    /// Largest imaginary part dropped from frequency means.
    pub mean_imag_defect: f64,
}

/// Output of [`solve_homological`].
#[derive(Clone, Debug)]
pub struct HomSolution {
    pub f: TFSeries,
    pub nhat: NormalForm,
    /// The exact `k = 0` part moved into the normal form.
    pub nhat_series: TFSeries,
    pub report: HomReport,
}

struct ModeOut {
    f: Vec<(MonomialKey, C64)>,
    nhat: Vec<(MonomialKey, C64)>,
    counts: [usize; 6],
    margin: f64,
}

/// Solves `{N, F} + R_low = N̂` in Part order 1→6 for every Fourier mode
/// present in `r_low`.
pub fn solve_homological(n: &NormalForm, r_low: &TFSeries, params: &KamParams) -> Result<HomSolution> {
    let dims = r_low.dims().clone();
    if n.b() != dims.b() || n.omega.len() != dims.n() {
        return Err(KamError::DimensionMismatch("normal form and series disagree".into()));
    }
    let mut by_k: BTreeMap<KVec, Vec<(MonomialKey, C64)>> = BTreeMap::new();
    for (key, &c) in r_low.terms() {
        if key.degree() > 2 {
            return Err(KamError::Internal("R_low carries a term of degree above 2".into()));
        }
        by_k.entry(key.k.clone()).or_default().push((key.clone(), c));
    }
    let modes: Vec<(KVec, Vec<(MonomialKey, C64)>)> = by_k.into_iter().collect();
    let outs: Vec<Result<ModeOut>> = modes.par_iter().map(|(k, terms)| solve_mode(n, &dims, k, terms, params)).collect();
    let budgets = r_low.budgets();
    let mut f = TFSeries::new(dims.clone(), budgets);
    let mut nhat_series = TFSeries::new(dims.clone(), budgets);
    let mut report = HomReport::default();
    let mut margin = f64::INFINITY;
    for out in outs {
        let out = out?;
        for (key, c) in out.f {
            f.add_term(key, c);
        }
        for (key, c) in out.nhat {
            nhat_series.add_term(key, c);
        }
        for p in 0..6 {
            report.part_counts[p] += out.counts[p];
        }
        margin = margin.min(out.margin);
    }
    report.min_margin = margin.is_finite().then_some(margin);
    if r_low.is_real() {
        f.mark_real(1e-9);
        nhat_series.mark_real(1e-9);
    }
    let (nhat, defect) = NormalForm::from_means(&dims, &nhat_series)?;
    report.mean_imag_defect = defect;
    let dp = params.domain();
    report.residual = hom_residual(n, &f, r_low, &nhat_series, &dp)?;
    report.xf_norm = f.vector_field_norm(&dp);
    report.xr_norm = r_low.vector_field_norm(&dp);
    report.log10_estimate_constant = estimate_constant(&report, params, dims.n(), dims.b());
    Ok(HomSolution { f, nhat, nhat_series, report })
}

fn estimate_constant(r: &HomReport, params: &KamParams, n: usize, b: usize) -> Option<f64> {
    if r.xf_norm == 0.0 || r.xr_norm == 0.0 {
        return None;
    }
    let b2 = (b * b) as f64;
    let sigma = (params.s - params.s_next).max(f64::MIN_POSITIVE);
    let kk = params.kcut.max(1.0);
    let log_scale = -6.0 * params.gamma.log10() + ((10.0 * b2 + 2.0) * params.base.tau + 10.0 * b2) * kk.log10()
        - (n as f64 + 1.0) * sigma.log10()
        + r.xr_norm.log10();
    Some(r.xf_norm.log10() - log_scale)
}

/// `‖X_{{N,F} + R_low − N̂}‖` on `dp`.
pub fn hom_residual(n: &NormalForm, f: &TFSeries, r_low: &TFSeries, nhat: &TFSeries, dp: &DomainParams) -> Result<f64> {
    let dims = f.dims().clone();
    let budgets = Budgets { d_max: r_low.budgets().d_max.max(2), ..r_low.budgets() };
    let ns = n.to_series(&dims, budgets);
    let mut total = ns.bracket(&f.with_budgets(budgets))?;
    total.axpy(C64::new(1.0, 0.0), r_low)?;
    total.axpy(C64::new(-1.0, 0.0), nhat)?;
    Ok(total.vector_field_norm(dp))
}

fn resonant(rc: ResonanceCondition) -> KamError {
    KamError::ResonantParameter(Box::new(rc))
}

fn solve_mode(n: &NormalForm, dims: &Arc<Dims>, k: &KVec, terms: &[(MonomialKey, C64)], params: &KamParams) -> Result<ModeOut> {
    let b = dims.b();
    let kv: Vec<i32> = k.to_vec();
    let kzero = kv.iter().all(|&v| v == 0);
    let kappa = n.kappa(&kv);
    let zslots = dims.zero_slots();
    let zpos = |slot: usize| zslots.iter().position(|&s| s == slot);
    let mut out = ModeOut { f: Vec::new(), nhat: Vec::new(), counts: [0; 6], margin: f64::INFINITY };

    let mut rx = ZERO;
    let mut ry = vec![ZERO; dims.n()];
    let mut rz0 = vec![ZERO; b];
    let mut rzb0 = vec![ZERO; b];
    let mut rp = DenseMatrix::zeros(b, b);
    let mut rm = DenseMatrix::zeros(b, b);
    let mut rs = DenseMatrix::zeros(b, b);
    let mut quad0 = false;
    // Per normal mode: u (z₀ z_j), v (z̄₀ z_j), p (z₀ z̄_j), q (z̄₀ z̄_j).
    let mut mixed: BTreeMap<u32, [Vec<C64>; 4]> = BTreeMap::new();
    let mut normal_lin: BTreeMap<u32, [C64; 2]> = BTreeMap::new();
    let mut normal_quad: Vec<(MonomialKey, C64, Vec<(u32, i32)>)> = Vec::new();

    for (key, c) in terms {
        let c = *c;
        let ya = key.y_degree();
        let zd = key.z_degree();
        match (ya, zd) {
            (0, 0) => rx += c,
            (1, 0) => ry[key.alpha.iter().position(|&e| e == 1).unwrap()] += c,
            (0, 1) => {
                let (slot, bar) = single_slot(key);
                match zpos(slot) {
                    Some(p) if bar => rzb0[p] += c,
                    Some(p) => rz0[p] += c,
                    None => normal_lin.entry(dims.mode(slot)).or_insert([ZERO; 2])[bar as usize] += c,
                }
            }
            (0, 2) => {
                let v = quad_vars(key);
                let ((s1, b1), (s2, b2)) = (v[0], v[1]);
                match (zpos(s1), zpos(s2)) {
                    (Some(i), Some(l)) => {
                        quad0 = true;
                        match (b1, b2) {
                            (false, false) => sym_add(&mut rp, i, l, c),
                            (true, true) => sym_add(&mut rs, i, l, c),
                            (false, true) => rm[(l, i)] += c,
                            (true, false) => rm[(i, l)] += c,
                        }
                    }
                    (Some(i), None) | (None, Some(i)) => {
                        let (zb0, (ns, nb)) = if zpos(s1).is_some() { (b1, (s2, b2)) } else { (b2, (s1, b1)) };
                        let j = dims.mode(ns);
                        let e = mixed.entry(j).or_insert_with(|| std::array::from_fn(|_| vec![ZERO; b]));
                        let idx = match (zb0, nb) {
                            (false, false) => 0,
                            (true, false) => 1,
                            (false, true) => 2,
                            (true, true) => 3,
                        };
                        e[idx][i] += c;
                    }
                    (None, None) => {
                        let sg = |bar: bool| if bar { -1 } else { 1 };
                        let (j1, j2) = (dims.mode(s1), dims.mode(s2));
                        let l = if j1 == j2 {
                            let m = sg(b1) + sg(b2);
                            if m == 0 {
                                vec![]
                            } else {
                                vec![(j1, m)]
                            }
                        } else {
                            vec![(j1, sg(b1)), (j2, sg(b2))]
                        };
                        normal_quad.push((key.clone(), c, l));
                    }
                }
            }
            _ => return Err(KamError::Internal(format!("unexpected low-degree term {key:?}"))),
        }
    }

    let a_lin = &n.nz0;
    let c_lin = &n.nzb0;
    let dot = |x: &[C64], y: &[C64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<C64>();

    // Part 1: z₀ quadratics.
    let (mut fp, mut fm, mut fs) = (DenseMatrix::zeros(b, b), DenseMatrix::zeros(b, b), DenseMatrix::zeros(b, b));
    if quad0 {
        if kzero {
            push_quad0(dims, &kv, &rp, &rm, &rs, &mut out.nhat);
        } else {
            let op = family_a(n, kappa);
            let thr = params.gamma_i(Family::R1) / k_pow(&kv, params.tau_i(Family::R1));
            let rc = block_condition(&op, Family::R1, &kv, None, thr);
            if rc.violated() {
                return Err(resonant(rc));
            }
            out.margin = out.margin.min(rc.margin());
            let mut rhs = vec(&rp);
            rhs.extend(vec(&rm));
            rhs.extend(vec(&rs));
            let x = matrix::solve_dense_tol(&op, &rhs, thr / 2.0)?;
            let bb = b * b;
            fp = unvec(&x[..bb], b, b)?;
            fm = unvec(&x[bb..2 * bb], b, b)?;
            fs = unvec(&x[2 * bb..], b, b)?;
            push_quad0(dims, &kv, &fp, &fm, &fs, &mut out.f);
            out.counts[0] += 1;
        }
    }

    // Part 2: normal quadratics.
    for (key, c, l) in normal_quad {
        if kzero && l.is_empty() {
            out.nhat.push((key, c));
            continue;
        }
        let rc = kl_condition(n, &kv, l, params);
        if rc.violated() {
            return Err(resonant(rc));
        }
        out.margin = out.margin.min(rc.margin());
        let d = kappa + rc.l.as_ref().unwrap().iter().map(|&(j, m)| m as f64 * n.omega_of(j)).sum::<f64>();
        out.f.push((key, c / (I * d)));
        out.counts[1] += 1;
    }

    // Part 3: z₀ × normal blocks.
    let thr3 = params.gamma_i(Family::R3) / k_pow(&kv, params.tau_i(Family::R3));
    let mut mixed_sol: BTreeMap<u32, [Vec<C64>; 4]> = BTreeMap::new();
    for (&j, rhs) in &mixed {
        let mut sol: [Vec<C64>; 4] = std::array::from_fn(|_| vec![ZERO; b]);
        for (sign, (iu, iv)) in [(1i8, (0, 1)), (-1i8, (2, 3))] {
            if rhs[iu].iter().chain(&rhs[iv]).all(|c| *c == ZERO) {
                continue;
            }
            let op = family_b_half(n, &kv, j, sign);
            let rc = block_condition(&op, Family::R3, &kv, Some((j, sign)), thr3);
            if rc.violated() {
                return Err(resonant(rc));
            }
            out.margin = out.margin.min(rc.margin());
            let mut r = rhs[iu].clone();
            r.extend(&rhs[iv]);
            let x = matrix::solve_dense_tol(&op, &r, thr3 / 2.0)?;
            sol[iu] = x[..b].to_vec();
            sol[iv] = x[b..].to_vec();
            out.counts[2] += 1;
        }
        for (idx, v) in sol.iter().enumerate() {
            for (i, &c) in v.iter().enumerate() {
                if c == ZERO {
                    continue;
                }
                let z0 = dims.zero_modes()[i];
                let kb = dims.key().k(&kv);
                let kb = if idx % 2 == 0 { kb.z(z0, 1) } else { kb.zb(z0, 1) };
                let kb = if idx < 2 { kb.z(j, 1) } else { kb.zb(j, 1) };
                out.f.push((kb.build(), c));
            }
        }
        mixed_sol.insert(j, sol);
    }

    // Part 4: z₀ linear, corrected by the Part 1 solution.
    let mut fu = vec![ZERO; b];
    let mut fv = vec![ZERO; b];
    if b > 0 {
        let corr_u: Vec<C64> = (0..b)
            .map(|i| I * ((0..b).map(|l| fm[(l, i)] * a_lin[l] - 2.0 * fp[(i, l)] * c_lin[l]).sum::<C64>()))
            .collect();
        let corr_v: Vec<C64> = (0..b)
            .map(|i| I * ((0..b).map(|l| 2.0 * fs[(i, l)] * a_lin[l] - fm[(i, l)] * c_lin[l]).sum::<C64>()))
            .collect();
        let mut rhs: Vec<C64> = rz0.iter().zip(&corr_u).map(|(a, b)| a + b).collect();
        rhs.extend(rzb0.iter().zip(&corr_v).map(|(a, b)| a + b));
        if rhs.iter().any(|c| *c != ZERO) {
            if kzero {
                for (i, &j) in dims.zero_modes().iter().enumerate() {
                    out.nhat.push((dims.key().z(j, 1).build(), rhs[i]));
                    out.nhat.push((dims.key().zb(j, 1).build(), rhs[b + i]));
                }
            } else {
                let op = family_c(n, kappa, 0.0);
                let thr = params.gamma_i(Family::R4) / k_pow(&kv, params.tau_i(Family::R4));
                let rc = block_condition(&op, Family::R4, &kv, None, thr);
                if rc.violated() {
                    return Err(resonant(rc));
                }
                out.margin = out.margin.min(rc.margin());
                let x = matrix::solve_dense_tol(&op, &rhs, thr / 2.0)?;
                fu = x[..b].to_vec();
                fv = x[b..].to_vec();
                for (i, &j) in dims.zero_modes().iter().enumerate() {
                    out.f.push((dims.key().k(&kv).z(j, 1).build(), fu[i]));
                    out.f.push((dims.key().k(&kv).zb(j, 1).build(), fv[i]));
                }
                out.counts[3] += 1;
            }
        }
    }

    // Part 5: normal linear, corrected by the Part 3 blocks.
    let mut lin_modes: Vec<u32> = normal_lin.keys().copied().collect();
    lin_modes.extend(mixed_sol.keys().copied());
    lin_modes.sort_unstable();
    lin_modes.dedup();
    for j in lin_modes {
        let r = normal_lin.get(&j).copied().unwrap_or([ZERO; 2]);
        let (cz, czb) = match mixed_sol.get(&j) {
            Some(s) => (I * (dot(a_lin, &s[1]) - dot(c_lin, &s[0])), I * (dot(a_lin, &s[3]) - dot(c_lin, &s[2]))),
            None => (ZERO, ZERO),
        };
        for (sign, rhs) in [(1i32, r[0] + cz), (-1i32, r[1] + czb)] {
            if rhs == ZERO {
                continue;
            }
            let rc = kl_condition(n, &kv, vec![(j, sign)], params);
            if rc.violated() {
                return Err(resonant(rc));
            }
            out.margin = out.margin.min(rc.margin());
            let d = kappa + sign as f64 * n.omega_of(j);
            let key = if sign > 0 { dims.key().k(&kv).z(j, 1) } else { dims.key().k(&kv).zb(j, 1) };
            out.f.push((key.build(), rhs / (I * d)));
            out.counts[4] += 1;
        }
    }

    // Part 6: angle and action terms, corrected by the Part 4 solution.
    let x_rhs = rx + I * (dot(a_lin, &fv) - dot(c_lin, &fu));
    if kzero {
        if rx != ZERO {
            out.nhat.push((dims.key().build(), rx));
        }
        for (bi, &c) in ry.iter().enumerate() {
            if c != ZERO {
                out.nhat.push((dims.key().y(bi, 1).build(), c));
            }
        }
    } else if x_rhs != ZERO || ry.iter().any(|c| *c != ZERO) {
        let rc = kl_condition(n, &kv, Vec::new(), params);
        if rc.violated() {
            return Err(resonant(rc));
        }
        out.margin = out.margin.min(rc.margin());
        if x_rhs != ZERO {
            out.f.push((dims.key().k(&kv).build(), x_rhs / (I * kappa)));
        }
        for (bi, &c) in ry.iter().enumerate() {
            if c != ZERO {
                out.f.push((dims.key().k(&kv).y(bi, 1).build(), c / (I * kappa)));
            }
        }
        out.counts[5] += 1;
    }
    Ok(out)
}

/// Emits `zᵀPz + z̄ᵀMz + z̄ᵀSz̄` as monomials at the mode's `k`.
fn push_quad0(dims: &Dims, k: &[i32], p: &DenseMatrix, m: &DenseMatrix, s: &DenseMatrix, out: &mut Vec<(MonomialKey, C64)>) {
    let zs = dims.zero_modes();
    let b = zs.len();
    for i in 0..b {
        for l in 0..b {
            let (ji, jl) = (zs[i], zs[l]);
            if i <= l {
                let cp = if i == l { p[(i, i)] } else { p[(i, l)] + p[(l, i)] };
                let cs = if i == l { s[(i, i)] } else { s[(i, l)] + s[(l, i)] };
                out.push((dims.key().k(k).z(ji, 1).z(jl, 1).build(), cp));
                out.push((dims.key().k(k).zb(ji, 1).zb(jl, 1).build(), cs));
            }
            out.push((dims.key().k(k).zb(ji, 1).z(jl, 1).build(), m[(i, l)]));
        }
    }
}
