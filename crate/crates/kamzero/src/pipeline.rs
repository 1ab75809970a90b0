//! End-to-end drivers behind the command-line entry points.

use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::error::{KamError, Result};
use crate::homological::NormalForm;
use crate::kam::{self, schedule, IterationReport};
use crate::measure::{estimate_excluded, MeasureReport};
use crate::nls::{self, BirkhoffResult, IndexFamily, KamForm, NlsModel, ParityKind};
use crate::series::TFSeries;
use crate::synthetic;

pub struct NlsBuild {
    pub model: NlsModel,
    pub birkhoff: BirkhoffResult,
    pub form: KamForm,
}

pub fn nls_build(cfg: &RunConfig, xi_index: Option<usize>) -> Result<NlsBuild> {
    let model = cfg.nls_model(xi_index)?;
    let birkhoff = nls::birkhoff_transform(&model, 2)?;
    let form = nls::to_kam_form(&model, &birkhoff.h, cfg.budgets())?;
    Ok(NlsBuild { model, birkhoff, form })
}

/// `(N₀, R₀)` for the configured mode.
pub fn initial_hamiltonian(cfg: &RunConfig, xi_index: Option<usize>) -> Result<(NormalForm, TFSeries)> {
    match cfg.mode {
        Mode::Nls | Mode::Measure => {
            let b = nls_build(cfg, xi_index)?;
            Ok((b.form.n0, b.form.r))
        }
        Mode::Synthetic => {
            let p = synthetic::build(&cfg.synthetic_spec(), &cfg.initial_domain())?;
            let r = if cfg.synthetic.inject_z0 > 0.0 {
                synthetic::inject_zero_mode_term(&p.r0, crate::C64::new(cfg.synthetic.inject_z0, 0.0))?
            } else {
                p.r0
            };
            Ok((p.n0, r))
        }
    }
}

pub fn run_config(cfg: &RunConfig, xi_index: Option<usize>, max_steps: Option<u32>) -> Result<IterationReport> {
    let (n0, r0) = initial_hamiltonian(cfg, xi_index)?;
    let mut opts = cfg.run_options();
    if let Some(m) = max_steps {
        opts.max_steps = m;
    }
    kam::run(&n0, &r0, &cfg.base(), &opts)
}

/// One report per γ of the grid ladder, on the NLS frequency map.
pub fn measure_config(cfg: &RunConfig) -> Result<Vec<MeasureReport>> {
    let gs = cfg.grid.as_ref().ok_or_else(|| KamError::Domain("measure needs a [grid] section".into()))?;
    let grid = cfg.grid().unwrap()?;
    let sites = cfg.model.sites.clone().unwrap_or_default();
    let xi0 = grid.point(0);
    let model = NlsModel::new(sites, xi0, cfg.model.jmax, cfg.model.taylor_depth)?;
    let bk = nls::birkhoff_transform(&model, 2)?;
    let (alpha, a) = nls::frequency_map(&model, &bk.h)?;
    let dims = model.kam_dims()?;
    let n = model.n();
    let nf_at = |xi: &[f64]| {
        let omega: Vec<f64> = (0..n).map(|p| alpha[p] + (0..n).map(|q| a[p][q] * xi[q]).sum::<f64>()).collect();
        NormalForm::with_frequencies(&dims, &omega, NlsModel::lambda).expect("frequency count matches n")
    };
    let ladder = if gs.gamma.is_empty() { vec![cfg.schedule.gamma1] } else { gs.gamma.clone() };
    ladder
        .iter()
        .map(|&g| {
            let base = kam::BaseParams { gamma1: g, ..cfg.base() };
            let params = schedule(1, &base, cfg.schedule.eps0, cfg.schedule.r1);
            estimate_excluded(&grid, &dims, nf_at, &params, gs.kcut, &gs.families)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepParity {
    pub m: usize,
    pub even_k_blocks: usize,
    pub odd_k_blocks: usize,
    pub zero_mode_linear: usize,
    /// `max(|R̂^{z₀}(0)|, |R̂^{z̄₀}(0)|)`.
    pub zero_mode_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub max_eliminated_quartic: f64,
    pub gbar_constant: f64,
    pub gbar_spread: f64,
    /// Keys of `K` with nonzero `Σ n(β_n − γ_n)`.
    pub momentum_violations: usize,
    /// Keys of `K` violating the cosine sign-selection rule.
    pub selection_violations: usize,
    /// Keys of `R₀` with odd reflection parity.
    pub reflection_violations: usize,
    pub steps: Vec<StepParity>,
    pub index_checks: Vec<(String, bool)>,
    pub passed: bool,
}

/// Zero-mode means of `R` at `k = 0`.
pub fn zero_mode_mean(r: &TFSeries) -> f64 {
    let dims = r.dims();
    dims.zero_modes().iter().map(|&j| r.coeff(&dims.key().z(j, 1).build()).norm().max(r.coeff(&dims.key().zb(j, 1).build()).norm())).fold(0.0, f64::max)
}

pub fn step_parity(m: usize, r: &TFSeries, tol: f64) -> StepParity {
    StepParity {
        m,
        even_k_blocks: nls::parity_check(r, ParityKind::EvenKBlocks, tol).len(),
        odd_k_blocks: nls::parity_check(r, ParityKind::OddKBlocks, tol).len(),
        zero_mode_linear: nls::parity_check(r, ParityKind::ZeroModeLinear, tol).len(),
        zero_mode_mean: zero_mode_mean(r),
    }
}

/// Parity and invariant suite on the NLS pipeline, over `steps` KAM steps.
pub fn check_config(cfg: &RunConfig, xi_index: Option<usize>, steps: u32) -> Result<CheckReport> {
    let b = nls_build(cfg, xi_index)?;
    let h = &b.birkhoff.h;
    let hd = h.dims();
    let sextic = h.filter(|k, c| k.z_degree() >= 6 && c.norm() > 1e-15);
    let momentum_violations = sextic.terms().keys().filter(|k| nls::momentum(hd, k) != 0).count();
    let selection_violations = sextic.terms().keys().filter(|k| !nls::cosine_selection(hd, k)).count();
    let r0 = &b.form.r;
    let reflection_violations = r0.terms().iter().filter(|(k, c)| c.norm() > 1e-15 && nls::reflection_parity(r0.dims(), k) != 0).count();
    let (gbar_constant, gbar_spread) = nls::gbar_pattern(&b.birkhoff.gbar);
    let tol = 1e-12;
    let mut parity = Vec::new();
    let mut opts = cfg.run_options();
    opts.max_steps = steps;
    kam::run_observed(&b.form.n0, r0, &cfg.base(), &opts, |m, _, r| parity.push(step_parity(m, r, tol)))?;
    let (v1, v2, v3, v4) = (IndexFamily::v1(), IndexFamily::v2(), IndexFamily::v3(), IndexFamily::v4());
    let index_checks = vec![
        ("V1+V2".to_string(), nls::index_solvability(&[v1, v2])),
        ("V3+V4+V4".to_string(), nls::index_solvability(&[v3, v4.clone(), v4])),
    ];
    let passed = b.birkhoff.h.dims().nslots() > 0
        && nls::max_eliminated_quartic(h) <= 1e-12
        && gbar_spread <= 1e-10
        && selection_violations == 0
        && reflection_violations == 0
        && parity.iter().all(|p| p.even_k_blocks == 0 && p.odd_k_blocks == 0 && p.zero_mode_linear == 0 && p.zero_mode_mean <= tol)
        && index_checks.iter().all(|(_, solvable)| !solvable);
    Ok(CheckReport {
        max_eliminated_quartic: nls::max_eliminated_quartic(h),
        gbar_constant,
        gbar_spread,
        momentum_violations,
        selection_violations,
        reflection_violations,
        steps: parity,
        index_checks,
        passed,
    })
}
