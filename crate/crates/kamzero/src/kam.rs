//! The KAM iteration: schedules, one Newton step, the δ₀ dichotomy and the
//! escape witness for the zero-frequency block.

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::homological::{self, Family, HomReport, NormalForm, ResonanceCondition};
use crate::matrix::{expm, op_norm, DenseMatrix};
use crate::series::{DomainParams, Point, TFSeries, C64, I};

/// Base constants of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    pub n: usize,
    pub b: usize,
    pub tau: f64,
    pub s1: f64,
    pub r1: f64,
    pub gamma1: f64,
    pub a: f64,
    pub p: f64,
}

/// Schedule values at step `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KamParams {
    pub m: u32,
    pub s: f64,
    pub s_next: f64,
    pub r: f64,
    pub gamma: f64,
    pub eps: f64,
    pub eta: f64,
    pub kcut: f64,
    pub base: BaseParams,
}

/// Numerical convergence floor.
pub const EPS_FLOOR: f64 = 1e-14;

/// `s_m = s₁(1/2 + 2^{−m−1})`.
pub fn s_of(m: u32, s1: f64) -> f64 {
    s1 * (0.5 + 0.5f64.powi(m as i32 + 1))
}

/// `γ_m = (γ₁/2)(1 + 2^{−m+1})`.
pub fn gamma_of(m: u32, gamma1: f64) -> f64 {
    gamma1 / 2.0 * (1.0 + 2f64.powi(1 - m as i32))
}

/// Schedule at step `m ≥ 1` for the current perturbation size `eps` and
/// radius `r`.  `η_m = ε_m^{1/3}` and `K_m = |log ε_m|/(s_m − s_{m+1})`,
/// both with `ε_m` floored at [`EPS_FLOOR`].
pub fn schedule(m: u32, base: &BaseParams, eps: f64, r: f64) -> KamParams {
    let m = m.max(1);
    let s = s_of(m, base.s1);
    let s_next = s_of(m + 1, base.s1);
    let e = eps.max(EPS_FLOOR);
    KamParams { m, s, s_next, r, gamma: gamma_of(m, base.gamma1), eps, eta: e.cbrt(), kcut: e.ln().abs() / (s - s_next), base: *base }
}

/// `ε_m = γ_{m−1}^{−6}(m−1)^{64b⁴}(s_{m−1}−s_m)^{−n−1}ε_{m−1}^{4/3}` for `m ≥ 2`.
pub fn scheduled_eps(m: u32, base: &BaseParams, eps_prev: f64) -> f64 {
    if m < 2 {
        return eps_prev;
    }
    let b4 = (base.b as f64).powi(4);
    let gap = s_of(m - 1, base.s1) - s_of(m, base.s1);
    gamma_of(m - 1, base.gamma1).powi(-6) * ((m - 1) as f64).powf(64.0 * b4) * gap.powf(-(base.n as f64) - 1.0) * eps_prev.powf(4.0 / 3.0)
}

impl KamParams {
    pub fn domain(&self) -> DomainParams {
        DomainParams { s: self.s, r: self.r, a: self.base.a, p: self.base.p }
    }

    pub fn next_domain(&self) -> DomainParams {
        DomainParams { s: self.s_next, r: self.r * self.eta, a: self.base.a, p: self.base.p }
    }

    /// `τ₁ = 3b²τ`, `τ₃ = 4b²τ`, `τ₄ = 2b²τ`.
    pub fn tau_i(&self, f: Family) -> f64 {
        let b2 = (self.base.b * self.base.b) as f64;
        match f {
            Family::KL => self.base.tau,
            Family::R1 => 3.0 * b2 * self.base.tau,
            Family::R3 => 4.0 * b2 * self.base.tau,
            Family::R4 => 2.0 * b2 * self.base.tau,
        }
    }

    /// `γ_{1m} = γ_m/m^{18b⁴}`, `γ_{3m} = γ_m/m^{32b⁴}`, `γ_{4m} = γ_m/m^{8b⁴}`.
    pub fn gamma_i(&self, f: Family) -> f64 {
        let b4 = (self.base.b as f64).powi(4);
        let e = match f {
            Family::KL => 0.0,
            Family::R1 => 18.0 * b4,
            Family::R3 => 32.0 * b4,
            Family::R4 => 8.0 * b4,
        };
        self.gamma / (self.m as f64).powf(e)
    }
}

/// Knobs of the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub max_steps: u32,
    pub eps_floor: f64,
    /// Largest admissible Fourier cutoff `K_m`.
    pub kcut_max: f64,
    pub lie_order_cap: usize,
    /// Absolute tolerance for weighted pruning of the new perturbation.
    pub prune_abs: f64,
    /// Pruning tolerance relative to the new perturbation's norm.
    pub prune_rel: f64,
    pub witness_steps: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { max_steps: 8, eps_floor: EPS_FLOOR, kcut_max: 1e5, lie_order_cap: 12, prune_abs: 1e-20, prune_rel: 1e-10, witness_steps: 200 }
    }
}

/// One row of the iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub m: usize,
    pub s: f64,
    pub r: f64,
    pub gamma: f64,
    pub kcut: f64,
    pub eps_scheduled: f64,
    pub eps_measured: f64,
    pub eps_next: f64,
    pub xf_norm: f64,
    pub residual: f64,
    pub drift: f64,
    pub delta0: f64,
    pub lie_order: usize,
    pub lie_remainder: f64,
    pub dropped: f64,
    pub pruned: f64,
    pub nhat_z0: Vec<C64>,
    pub nhat_zb0: Vec<C64>,
    pub hom: HomReport,
    pub witness: Option<WitnessRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    TorusConverged,
    NoTorusWitnessed { m: usize, delta0: f64 },
    ResonantSample { condition: ResonanceCondition },
    BudgetExhausted { reason: String },
}

impl Verdict {
    /// Process exit code of the verdict.
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::TorusConverged => 0,
            Verdict::NoTorusWitnessed { .. } => 2,
            Verdict::ResonantSample { .. } => 3,
            Verdict::BudgetExhausted { .. } => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub records: Vec<StepRecord>,
    pub verdict: Verdict,
    /// `Σ_m N̂^{z₀}_m` and `Σ_m N̂^{z̄₀}_m`.
    pub j_z0: Vec<C64>,
    pub j_zb0: Vec<C64>,
    pub omega_final: Vec<f64>,
}

/// Result of one KAM step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub n_next: NormalForm,
    pub r_next: TFSeries,
    pub f: TFSeries,
    pub nhat: NormalForm,
    pub record: StepRecord,
}

/// `δ₀ = (|N^{z₀}|₂² + |N^{z̄₀}|₂²)^{1/2}`.
pub fn delta0(n: &NormalForm) -> f64 {
    n.nz0.iter().chain(&n.nzb0).map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// One step `H_m ∘ Φ_m = N_{m+1} + R_{m+1}`.
///
/// With `W = N̂ − R_low` (so that `{N,F} = W`), the transformed Hamiltonian is
/// `N + N̂ + (R − R_low) + Σ_{n≥1} ad_F^n [R/n! + W/(n+1)!]`.
pub fn kam_step(n: &NormalForm, r: &TFSeries, params: &KamParams, opts: &RunOptions) -> Result<StepOutcome> {
    if params.kcut > opts.kcut_max {
        return Err(KamError::BudgetExhausted(format!("K_m = {:.3e} exceeds {:.3e}", params.kcut, opts.kcut_max)));
    }
    let dims = r.dims().clone();
    let dp_next = params.next_domain();
    let (low, _) = r.split_low_high();
    let r_low = low.filter(|k, _| k.k_norm() as f64 <= params.kcut);

    let mut support: Vec<Vec<i32>> = r_low.terms().keys().map(|k| k.k.to_vec()).collect();
    support.sort_unstable();
    support.dedup();
    let fails = homological::check_nonresonance_on(n, &dims, params, &support);
    if let Some(rc) = fails.into_iter().next() {
        return Err(KamError::ResonantParameter(Box::new(rc)));
    }
    let sol = homological::solve_homological(n, &r_low, params)?;
    let f = &sol.f;

    let mut w = sol.nhat_series.clone();
    w.axpy(C64::new(-1.0, 0.0), &r_low)?;
    let mut next = r.sub(&r_low)?;
    let mut dropped = 0.0;
    let mut a = r.clone();
    let mut bw = w;
    let mut fact = 1.0;
    let mut order = 0;
    let mut remainder = 0.0;
    let target = 0.01 * params.eps.powf(4.0 / 3.0).max(opts.eps_floor * 1e-4);
    if !f.is_empty() {
        for k in 1..=opts.lie_order_cap {
            a = a.bracket(f)?;
            bw = bw.bracket(f)?;
            dropped += a.dropped() + bw.dropped();
            fact *= k as f64;
            let mut term = a.scale(C64::new(1.0 / fact, 0.0));
            term.axpy(C64::new(1.0 / (fact * (k as f64 + 1.0)), 0.0), &bw)?;
            remainder = term.vector_field_norm(&dp_next);
            next.axpy(C64::new(1.0, 0.0), &term)?;
            order = k;
            if remainder <= target || term.is_empty() {
                break;
            }
        }
    }

    let (nhat, _) = NormalForm::from_means(&dims, &sol.nhat_series)?;
    let n_next = n.add(&nhat)?;
    // Imaginary parts of the frequency means stay in the perturbation.
    let real_part = nhat.to_series(&dims, r.budgets());
    let mut leftover = sol.nhat_series.sub(&real_part)?;
    leftover.prune();
    next.axpy(C64::new(1.0, 0.0), &leftover)?;
    dropped += next.dropped();
    next.set_dropped(0.0);
    if r.is_real() {
        next.mark_real(1e-9);
    }
    let tol = opts.prune_abs.max(opts.prune_rel * next.vector_field_norm(&dp_next));
    let pruned = next.prune_weighted(&dp_next, tol);
    let eps_next = next.vector_field_norm(&dp_next);
    let drift = nhat.omega.iter().map(|x| x * x).sum::<f64>().sqrt();
    let record = StepRecord {
        m: params.m as usize - 1,
        s: params.s,
        r: params.r,
        gamma: params.gamma,
        kcut: params.kcut,
        eps_scheduled: params.eps,
        eps_measured: params.eps,
        eps_next,
        xf_norm: sol.report.xf_norm,
        residual: sol.report.residual,
        drift,
        delta0: delta0(&n_next),
        lie_order: order,
        lie_remainder: remainder,
        dropped,
        pruned,
        nhat_z0: nhat.nz0.clone(),
        nhat_zb0: nhat.nzb0.clone(),
        hom: sol.report.clone(),
        witness: None,
    };
    Ok(StepOutcome { n_next, r_next: next, f: sol.f, nhat, record })
}

/// Status of the dichotomy after some steps.
#[derive(Clone, Debug, PartialEq)]
pub enum Dichotomy {
    Torus,
    /// `δ₀ > 20 ε^{7/6}` at the latest step; the witness decides.
    NoTorusCandidate { m: usize, delta0: f64 },
    Undecided,
}

/// `20 ε^{7/6}`.
pub fn delta_threshold(eps: f64) -> f64 {
    20.0 * eps.powf(7.0 / 6.0)
}

/// Applies the δ₀ test to the trace.
pub fn dichotomy(records: &[StepRecord], eps_floor: f64) -> Dichotomy {
    let Some(last) = records.last() else {
        return Dichotomy::Undecided;
    };
    let thr = delta_threshold(last.eps_measured);
    if last.delta0 > thr {
        return Dichotomy::NoTorusCandidate { m: last.m, delta0: last.delta0 };
    }
    let tail = &records[records.len().saturating_sub(3)..];
    let small = tail.iter().all(|rec| rec.delta0 == 0.0 || rec.delta0 < delta_threshold(rec.eps_measured));
    if last.eps_next < eps_floor && small {
        Dichotomy::Torus
    } else {
        Dichotomy::Undecided
    }
}

/// Outcome of the escape witness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessRecord {
    pub escaped: bool,
    pub eps: f64,
    pub delta0: f64,
    pub x0_norm: f64,
    pub x1_norm: f64,
    /// `|e^{−A₀}X(1)|₂`.
    pub xtilde_norm: f64,
    /// `δ₀ − ε^{7/6}`, exact when `A₀ = 0` and `g₀ = 0`.
    pub oracle: f64,
    /// `δ₀/4 − 3ε^{7/6}`.
    pub chain_bound: f64,
    pub max_norm: f64,
    pub a0_norm: f64,
    /// `‖e^{−A₀t}‖` at `t = 0, 1/4, …, 1`.
    pub flow_norms: Vec<f64>,
    pub trajectory: Vec<(f64, f64)>,
}

/// Linear part of the zero-mode equations
/// `ż₀ = i ∂H/∂z̄₀`, `z̄̇₀ = −i ∂H/∂z₀`: returns `(α₀, A₀)`.
pub fn zero_mode_system(n: &NormalForm) -> (Vec<C64>, DenseMatrix) {
    let b = n.b();
    let mut alpha: Vec<C64> = n.nzb0.iter().map(|c| I * c).collect();
    alpha.extend(n.nz0.iter().map(|c| -I * c));
    let mut a0 = DenseMatrix::zeros(2 * b, 2 * b);
    for r in 0..b {
        for c in 0..b {
            a0[(r, c)] = I * n.nz0zb0[(r, c)];
            a0[(r, b + c)] = 2.0 * I * n.nzb0zb0[(r, c)];
            a0[(b + r, c)] = -2.0 * I * n.nz0z0[(r, c)];
            a0[(b + r, b + c)] = -I * n.nz0zb0[(c, r)];
        }
    }
    (alpha, a0)
}

/// Integrates `Ẋ = α₀ + A₀X + g₀(X)` on `[0,1]` by RK4, with `g₀` taken from
/// `R` at `x = 0`, `y = 0` and vanishing normal coordinates.  The start is
/// `X(0) = −ε^{7/6} α₀/|α₀|` normalised in the weighted norm.
pub fn no_torus_witness(n: &NormalForm, r: &TFSeries, eps: f64, dp: &DomainParams, steps: usize) -> Result<WitnessRecord> {
    let dims = r.dims().clone();
    let b = dims.b();
    if n.b() != b {
        return Err(KamError::DimensionMismatch("normal form and series disagree".into()));
    }
    let (alpha, a0) = zero_mode_system(n);
    let a0_norm = op_norm(&a0);
    let times = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut flow_norms = Vec::with_capacity(times.len());
    for &t in &times {
        flow_norms.push(op_norm(&expm(&a0.scale(C64::new(-t, 0.0)))?));
    }
    if flow_norms.iter().any(|&v| !(v > 0.5 && v < 2.0)) {
        return Err(KamError::PremiseFailed(format!("‖e^(-A0 t)‖ leaves (1/2, 2): {flow_norms:?}")));
    }

    let zslots = dims.zero_slots();
    let restricted = r.filter(|k, _| k.y_degree() == 0 && (0..k.beta.len()).all(|s| zslots.contains(&s) || k.beta[s] + k.gamma[s] == 0));
    let d_zb: Vec<TFSeries> = zslots.iter().map(|&s| restricted.dzb_slot(s)).collect();
    let d_z: Vec<TFSeries> = zslots.iter().map(|&s| restricted.dz_slot(s)).collect();
    let g0 = |x: &[C64]| -> Vec<C64> {
        let mut pt = Point::origin(&dims);
        for (i, &s) in zslots.iter().enumerate() {
            pt.z[s] = x[i];
            pt.zb[s] = x[b + i];
        }
        let mut g: Vec<C64> = d_zb.iter().map(|d| I * d.eval(&pt)).collect();
        g.extend(d_z.iter().map(|d| -I * d.eval(&pt)));
        g
    };
    let rhs = |x: &[C64]| -> Vec<C64> {
        let ax = a0.matvec(x).unwrap();
        let g = g0(x);
        (0..2 * b).map(|i| alpha[i] + ax[i] + g[i]).collect()
    };

    let d0 = delta0(n);
    let e76 = eps.powf(7.0 / 6.0);
    let weights: Vec<f64> = dims.zero_modes().iter().map(|&j| dp.weight(j)).collect();
    let wnorm = |x: &[C64]| {
        let z: f64 = (0..b).map(|i| (weights[i] * x[i].norm()).powi(2)).sum::<f64>().sqrt();
        let zb: f64 = (0..b).map(|i| (weights[i] * x[b + i].norm()).powi(2)).sum::<f64>().sqrt();
        z + zb
    };
    let norm2 = |x: &[C64]| x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut x: Vec<C64> = if d0 > 0.0 {
        alpha.iter().map(|c| -c / d0).collect()
    } else {
        let mut v = vec![C64::new(0.0, 0.0); 2 * b];
        if b > 0 {
            v[0] = C64::new(1.0, 0.0);
        }
        v
    };
    let w0 = wnorm(&x);
    if w0 > 0.0 {
        x.iter_mut().for_each(|c| *c *= e76 / w0);
    }
    let x0_norm = norm2(&x);
    let h = 1.0 / steps.max(1) as f64;
    let mut trajectory = vec![(0.0, x0_norm)];
    let mut max_norm = x0_norm;
    for step in 0..steps.max(1) {
        let k1 = rhs(&x);
        let x2: Vec<C64> = x.iter().zip(&k1).map(|(a, k)| a + k * (h / 2.0)).collect();
        let k2 = rhs(&x2);
        let x3: Vec<C64> = x.iter().zip(&k2).map(|(a, k)| a + k * (h / 2.0)).collect();
        let k3 = rhs(&x3);
        let x4: Vec<C64> = x.iter().zip(&k3).map(|(a, k)| a + k * h).collect();
        let k4 = rhs(&x4);
        for i in 0..x.len() {
            x[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
        }
        let nx = norm2(&x);
        max_norm = max_norm.max(nx);
        trajectory.push(((step + 1) as f64 * h, nx));
    }
    let x1_norm = norm2(&x);
    let xt = expm(&a0.scale(C64::new(-1.0, 0.0)))?.matvec(&x)?;
    Ok(WitnessRecord {
        escaped: x1_norm > 2.0 * e76,
        eps,
        delta0: d0,
        x0_norm,
        x1_norm,
        xtilde_norm: norm2(&xt),
        oracle: d0 - e76,
        chain_bound: d0 / 4.0 - 3.0 * e76,
        max_norm,
        a0_norm,
        flow_norms,
        trajectory,
    })
}

/// Iterates until the dichotomy decides or a budget runs out.
pub fn run(n0: &NormalForm, r0: &TFSeries, base: &BaseParams, opts: &RunOptions) -> Result<IterationReport> {
    run_observed(n0, r0, base, opts, |_, _, _| {})
}

/// [`run`], calling `observe(m, N_m, R_m)` for the initial Hamiltonian and
/// after every completed step.
pub fn run_observed<O>(n0: &NormalForm, r0: &TFSeries, base: &BaseParams, opts: &RunOptions, mut observe: O) -> Result<IterationReport>
where
    O: FnMut(usize, &NormalForm, &TFSeries),
{
    observe(0, n0, r0);
    let dims = r0.dims().clone();
    let mut n = n0.clone();
    let mut r = r0.clone();
    let mut radius = base.r1;
    let mut eps = r.vector_field_norm(&DomainParams { s: s_of(1, base.s1), r: radius, a: base.a, p: base.p });
    let mut records: Vec<StepRecord> = Vec::new();
    let mut j_z0 = vec![C64::new(0.0, 0.0); dims.b()];
    let mut j_zb0 = vec![C64::new(0.0, 0.0); dims.b()];
    let mut prev: Option<(f64, u32)> = None;
    let mut verdict = None;
    for m in 1..=opts.max_steps {
        let params = schedule(m, base, eps, radius);
        let out = match kam_step(&n, &r, &params, opts) {
            Ok(o) => o,
            Err(KamError::ResonantParameter(rc)) => {
                verdict = Some(Verdict::ResonantSample { condition: *rc });
                break;
            }
            Err(KamError::BudgetExhausted(reason)) => {
                verdict = Some(Verdict::BudgetExhausted { reason });
                break;
            }
            Err(e) => return Err(e),
        };
        let mut rec = out.record;
        rec.eps_scheduled = match prev {
            Some((e, _)) => scheduled_eps(m, base, e),
            None => eps,
        };
        for i in 0..dims.b() {
            j_z0[i] += rec.nhat_z0[i];
            j_zb0[i] += rec.nhat_zb0[i];
        }
        prev = Some((eps, m));
        n = out.n_next;
        r = out.r_next;
        observe(m as usize, &n, &r);
        radius *= params.eta;
        let eps_next = rec.eps_next;
        records.push(rec);
        match dichotomy(&records, opts.eps_floor) {
            Dichotomy::NoTorusCandidate { m: mi, delta0 } => {
                let w = no_torus_witness(&n, &r, eps, &params.next_domain(), opts.witness_steps)?;
                let escaped = w.escaped;
                records.last_mut().unwrap().witness = Some(w);
                if escaped {
                    verdict = Some(Verdict::NoTorusWitnessed { m: mi, delta0 });
                    break;
                }
            }
            Dichotomy::Torus => {
                verdict = Some(Verdict::TorusConverged);
                break;
            }
            Dichotomy::Undecided => {}
        }
        eps = eps_next;
    }
    let verdict = verdict.unwrap_or_else(|| Verdict::BudgetExhausted { reason: format!("no verdict after {} steps", opts.max_steps) });
    Ok(IterationReport { records, verdict, j_z0, j_zb0, omega_final: n.omega.clone() })
}
