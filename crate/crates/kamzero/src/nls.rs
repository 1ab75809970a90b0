//! The cubic NLS on the circle with Neumann cosine modes: coupling tensor,
//! quartic Birkhoff step, action–angle substitution at the tangential sites
//! and the parity bookkeeping for the zero-mode coefficients.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::homological::NormalForm;
use crate::series::{Budgets, Dims, MonomialKey, TFSeries, C64, I};

/// Model data: tangential sites, actions `ξ`, cutoff and Taylor depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlsModel {
    pub sites: Vec<u32>,
    pub xi: Vec<f64>,
    pub jmax: u32,
    pub taylor_depth: u32,
}

impl NlsModel {
    pub fn new(sites: Vec<u32>, xi: Vec<f64>, jmax: u32, taylor_depth: u32) -> Result<Self> {
        if sites.is_empty() || sites.len() != xi.len() {
            return Err(KamError::DimensionMismatch(format!("{} sites with {} actions", sites.len(), xi.len())));
        }
        if xi.iter().any(|&v| !(v > 0.0)) {
            return Err(KamError::Domain(format!("actions must be positive, got {xi:?}")));
        }
        if sites.iter().any(|&j| j == 0 || j > jmax) || !sites.windows(2).all(|w| w[0] < w[1]) {
            return Err(KamError::Domain(format!("sites {sites:?} must be increasing in 1..={jmax}")));
        }
        Ok(NlsModel { sites, xi, jmax, taylor_depth })
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    /// `λ_j = j²`.
    pub fn lambda(j: u32) -> f64 {
        (j as f64).powi(2)
    }

    /// All modes `0..=J_max` as z-variables, mode 0 flagged as zero frequency.
    pub fn birkhoff_dims(&self) -> Result<Arc<Dims>> {
        Dims::new(0, &[], &[0], self.jmax)
    }

    /// Angles at the tangential sites, mode 0 as the zero-frequency block.
    pub fn kam_dims(&self) -> Result<Arc<Dims>> {
        Dims::new(self.n(), &self.sites, &[0], self.jmax)
    }

    pub fn with_xi(&self, xi: Vec<f64>) -> Result<Self> {
        NlsModel::new(self.sites.clone(), xi, self.jmax, self.taylor_depth)
    }
}

fn phi_norm(j: u32) -> f64 {
    if j == 0 {
        1.0 / (2.0 * PI).sqrt()
    } else {
        1.0 / PI.sqrt()
    }
}

/// `G_{ijkl} = ∫₀^{2π} φ_iφ_jφ_kφ_l dx` with `φ₀ = 1/√(2π)`, `φ_j = cos(jx)/√π`,
/// from the product-to-sum identity.
pub fn g_tensor(i: u32, j: u32, k: u32, l: u32) -> f64 {
    let (i, j, k, l) = (i as i64, j as i64, k as i64, l as i64);
    let mut hits = 0;
    for s2 in [1, -1] {
        for s3 in [1, -1] {
            for s4 in [1, -1] {
                if i + s2 * j + s3 * k + s4 * l == 0 {
                    hits += 1;
                }
            }
        }
    }
    if hits == 0 {
        return 0.0;
    }
    let norm = phi_norm(i as u32) * phi_norm(j as u32) * phi_norm(k as u32) * phi_norm(l as u32);
    norm * 2.0 * PI * hits as f64 / 8.0
}

fn budgets6() -> Budgets {
    Budgets { d_max: 6, k_max: 0, prune_tol: 1e-16 }
}

/// `Λ = Σ λ_j |q_j|²`.
pub fn lambda_series(dims: &Arc<Dims>, budgets: Budgets) -> TFSeries {
    let terms = dims.slots().iter().map(|&j| (dims.key().z(j, 1).zb(j, 1).build(), C64::new(NlsModel::lambda(j), 0.0)));
    let mut s = TFSeries::from_terms(dims.clone(), budgets, terms);
    s.mark_real(0.0);
    s
}

/// `G = (1/4) Σ G_{ijkl} q_i q_j q̄_k q̄_l` summed over ordered index tuples.
pub fn quartic_series(dims: &Arc<Dims>, budgets: Budgets) -> TFSeries {
    let modes = dims.slots().to_vec();
    let mut s = TFSeries::new(dims.clone(), budgets);
    for &i in &modes {
        for &j in &modes {
            for &k in &modes {
                for &l in &modes {
                    let g = g_tensor(i, j, k, l);
                    if g != 0.0 {
                        s.add_term(dims.key().z(i, 1).z(j, 1).zb(k, 1).zb(l, 1).build(), C64::new(0.25 * g, 0.0));
                    }
                }
            }
        }
    }
    s.mark_real(1e-15);
    s
}

/// `Σλβ − Σλγ`, so that `{Λ, m} = −iΔ m`.
pub fn lambda_divisor(dims: &Dims, key: &MonomialKey) -> f64 {
    (0..key.beta.len()).map(|s| NlsModel::lambda(dims.mode(s)) * (key.beta[s] as f64 - key.gamma[s] as f64)).sum()
}

/// Whether a z-monomial is a product of actions `|q_i|²`.
pub fn is_action_monomial(key: &MonomialKey) -> bool {
    key.beta == key.gamma
}

#[derive(Clone, Debug)]
pub struct BirkhoffResult {
    /// `Λ + Ḡ + K`.
    pub h: TFSeries,
    pub f: TFSeries,
    pub gbar: BTreeMap<(u32, u32), f64>,
    pub dropped: f64,
    pub remainder: f64,
}

/// Removes every non-action quartic monomial with `iF = G/(λ_i+λ_j−λ_k−λ_l)`
/// and returns `H ∘ Γ` to the given Lie order.
pub fn birkhoff_transform(model: &NlsModel, order: usize) -> Result<BirkhoffResult> {
    if order < 2 {
        return Err(KamError::Domain("Birkhoff order must be at least 2".into()));
    }
    let dims = model.birkhoff_dims()?;
    let budgets = budgets6();
    let g = quartic_series(&dims, budgets);
    let mut h = lambda_series(&dims, budgets);
    h.axpy(C64::new(1.0, 0.0), &g)?;
    let mut f = TFSeries::new(dims.clone(), budgets);
    for (key, &c) in g.terms() {
        if is_action_monomial(key) {
            continue;
        }
        let delta = lambda_divisor(&dims, key);
        if delta == 0.0 {
            return Err(KamError::Internal(format!("zero Birkhoff divisor at {key:?}")));
        }
        f.add_term(key.clone(), -I * c / delta);
    }
    f.mark_real(1e-14);
    let out = h.lie_transform(&f, order)?;
    let mut hb = out.series;
    hb.mark_real(1e-12);
    let gbar = gbar_readout(&hb);
    Ok(BirkhoffResult { h: hb, f, gbar, dropped: out.dropped, remainder: out.remainder })
}

/// `Ḡ_{ij}` = coefficient of `|q_i|²|q_j|²` divided by the number of
/// ordered index tuples producing it (4 for `i ≠ j`, 1 for `i = j`).
pub fn gbar_readout(h: &TFSeries) -> BTreeMap<(u32, u32), f64> {
    let dims = h.dims();
    let mut out = BTreeMap::new();
    for (key, c) in h.terms() {
        if key.z_degree() != 4 || !is_action_monomial(key) {
            continue;
        }
        let modes: Vec<u32> = (0..key.beta.len()).flat_map(|s| std::iter::repeat_n(dims.mode(s), key.beta[s] as usize)).collect();
        let (i, j) = (modes[0], modes[1]);
        let mult = if i == j { 1.0 } else { 4.0 };
        out.insert((i, j), c.re / mult);
    }
    out
}

/// Largest surviving coefficient among the quartic monomials
/// `q_i q_j q̄_k q̄_l` with `i ± j ± k ± l = 0` and `{i,j} ≠ {k,l}`.
pub fn max_eliminated_quartic(h: &TFSeries) -> f64 {
    let dims = h.dims();
    let modes = dims.slots().to_vec();
    let mut worst: f64 = 0.0;
    for &i in &modes {
        for &j in modes.iter().filter(|&&j| j >= i) {
            for &k in &modes {
                for &l in modes.iter().filter(|&&l| l >= k) {
                    if g_tensor(i, j, k, l) == 0.0 || (i, j) == (k, l) {
                        continue;
                    }
                    worst = worst.max(h.coeff(&dims.key().z(i, 1).z(j, 1).zb(k, 1).zb(l, 1).build()).norm());
                }
            }
        }
    }
    worst
}

/// `(2+δ_ij)/(16π)` for `i, j ≥ 1` and `1/(8π)` when either index is 0.
pub fn gbar_reference(i: u32, j: u32) -> f64 {
    if i == 0 || j == 0 {
        1.0 / (8.0 * PI)
    } else if i == j {
        3.0 / (16.0 * PI)
    } else {
        2.0 / (16.0 * PI)
    }
}

/// `Ḡ_ij / gbar_reference(i, j)` over all read-out pairs: returns the mean
/// ratio and the relative spread `(max − min)/mean`.
pub fn gbar_pattern(gbar: &BTreeMap<(u32, u32), f64>) -> (f64, f64) {
    let ratios: Vec<f64> = gbar.iter().map(|(&(i, j), &g)| g / gbar_reference(i, j)).collect();
    if ratios.is_empty() {
        return (0.0, 0.0);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, (hi - lo) / mean)
}

/// Whether signs `s_t` exist with `Σ s_t n_t = 0` over the mode indices of
/// the z-factors (each counted with multiplicity).  Products of cosines
/// integrate to zero unless this holds, and brackets preserve it.
pub fn cosine_selection(dims: &Dims, key: &MonomialKey) -> bool {
    let modes: Vec<usize> = (0..key.beta.len()).flat_map(|s| std::iter::repeat_n(dims.mode(s) as usize, (key.beta[s] + key.gamma[s]) as usize)).collect();
    let total: usize = modes.iter().sum();
    if total % 2 == 1 {
        return false;
    }
    let mut reach = vec![false; total / 2 + 1];
    reach[0] = true;
    for &m in &modes {
        for v in (m..=total / 2).rev() {
            reach[v] |= reach[v - m];
        }
    }
    reach[total / 2]
}

/// `q_{j_b} = √(ξ_b + y_b) e^{i x_b}` applied to a series in the `q`
/// variables, with `√(ξ+y)` expanded to `taylor_depth` in `y/ξ`.
#[derive(Clone, Debug)]
pub struct KamForm {
    pub n0: NormalForm,
    pub r: TFSeries,
    /// `ω(ξ) = α + Aξ`.
    pub alpha: Vec<f64>,
    pub a_matrix: Vec<Vec<f64>>,
    /// First omitted order of the `√(ξ+y)` expansions, one site at a time.
    pub taylor_tail: TFSeries,
    /// Largest `|Σ_b c ξ_b|` coupling to `|z_j|²` left in `R` (the `B`
    /// block that the frequency map leaves out).
    pub b_coupling: f64,
}

fn binom_half(p: f64, t: u32) -> f64 {
    (0..t).fold(1.0, |acc, i| acc * (p - i as f64) / (i as f64 + 1.0))
}

/// Substitutes the action–angle variables; returns the transformed series
/// and its first omitted Taylor order.
pub fn substitute(model: &NlsModel, h: &TFSeries, budgets: Budgets) -> Result<(TFSeries, TFSeries)> {
    let bdims = h.dims();
    let kdims = model.kam_dims()?;
    let depth = model.taylor_depth;
    let site_slot: Vec<usize> =
        model.sites.iter().map(|&j| bdims.slot(j).ok_or_else(|| KamError::Domain(format!("site {j} outside the mode range")))).collect::<Result<_>>()?;
    let mut out = TFSeries::new(kdims.clone(), budgets);
    let tail_budgets = Budgets { d_max: budgets.d_max + 2 * (depth + 1), ..budgets };
    let mut tail = TFSeries::new(kdims.clone(), tail_budgets);
    for (key, &c) in h.terms() {
        let mut base = MonomialKey::unit(&kdims);
        let mut scale = c;
        let mut expansions: Vec<Vec<(u32, f64)>> = Vec::with_capacity(model.n());
        let mut next: Vec<f64> = vec![0.0; model.n()];
        for (b, &s) in site_slot.iter().enumerate() {
            let (be, ga) = (key.beta[s], key.gamma[s]);
            base.k[b] = be as i32 - ga as i32;
            let p = (be + ga) as f64 / 2.0;
            let xi = model.xi[b];
            scale *= xi.powf(p);
            if be + ga == 0 {
                expansions.push(vec![(0, 1.0)]);
                continue;
            }
            expansions.push((0..=depth).map(|t| (t, binom_half(p, t) / xi.powi(t as i32))).filter(|(_, v)| *v != 0.0).collect());
            next[b] = binom_half(p, depth + 1) / xi.powi(depth as i32 + 1);
        }
        for (s, &j) in bdims.slots().iter().enumerate() {
            if model.sites.contains(&j) {
                continue;
            }
            let ks = kdims.slot(j).unwrap();
            base.beta[ks] = key.beta[s];
            base.gamma[ks] = key.gamma[s];
        }
        for (b, &w) in next.iter().enumerate() {
            if w != 0.0 {
                let mut k = base.clone();
                k.alpha[b] += depth + 1;
                tail.add_term(k, scale * w);
            }
        }
        let mut stack: Vec<(usize, MonomialKey, C64)> = vec![(0, base, scale)];
        while let Some((b, k, v)) = stack.pop() {
            if b == expansions.len() {
                out.add_term(k, v);
                continue;
            }
            for &(t, w) in &expansions[b] {
                let mut k2 = k.clone();
                k2.alpha[b] += t;
                stack.push((b + 1, k2, v * w));
            }
        }
    }
    if h.is_real() {
        out.mark_real(1e-12);
        tail.mark_real(1e-12);
    }
    Ok((out, tail))
}

/// `α_b = j_b²`, `A_aa = 2c_aa`, `A_ab = c_ab` with `c_ab` the coefficient
/// of `|q_a|²|q_b|²` in the Birkhoff Hamiltonian.
pub fn frequency_map(model: &NlsModel, h: &TFSeries) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let dims = h.dims();
    let n = model.n();
    let alpha: Vec<f64> = model.sites.iter().map(|&j| NlsModel::lambda(j)).collect();
    let mut a = vec![vec![0.0; n]; n];
    for (p, &i) in model.sites.iter().enumerate() {
        for (q, &j) in model.sites.iter().enumerate() {
            let key = dims.key().z(i, 1).zb(i, 1).z(j, 1).zb(j, 1).build();
            let c = h.coeff(&key).re;
            a[p][q] = if p == q { 2.0 * c } else { c };
        }
    }
    Ok((alpha, a))
}

/// `N₀ = ⟨α + Aξ, y⟩ + Σ j²|z_j|²` and `R` = the rest up to a constant.
pub fn to_kam_form(model: &NlsModel, h_birkhoff: &TFSeries, budgets: Budgets) -> Result<KamForm> {
    let kdims = model.kam_dims()?;
    let (t, taylor_tail) = substitute(model, h_birkhoff, budgets)?;
    let (alpha, a) = frequency_map(model, h_birkhoff)?;
    let omega: Vec<f64> = (0..model.n()).map(|p| alpha[p] + (0..model.n()).map(|q| a[p][q] * model.xi[q]).sum::<f64>()).collect();
    let n0 = NormalForm::with_frequencies(&kdims, &omega, NlsModel::lambda)?;
    let mut r = t.sub(&n0.to_series(&kdims, budgets))?;
    r.remove(&kdims.key().build());
    let mut b_coupling: f64 = 0.0;
    for &j in kdims.slots() {
        let c = r.coeff(&kdims.key().z(j, 1).zb(j, 1).build());
        b_coupling = b_coupling.max(c.norm());
    }
    if t.is_real() {
        r.mark_real(1e-12);
    }
    Ok(KamForm { n0, r, alpha, a_matrix: a, taylor_tail, b_coupling })
}

/// Builds the Birkhoff Hamiltonian (order 2) and its KAM form.
pub fn build(model: &NlsModel, budgets: Budgets) -> Result<(BirkhoffResult, KamForm)> {
    let bk = birkhoff_transform(model, 2)?;
    let kf = to_kam_form(model, &bk.h, budgets)?;
    Ok((bk, kf))
}

/// `Σ_b k_b j_b + Σ_j j(β_j − γ_j)`.
pub fn momentum(dims: &Dims, key: &MonomialKey) -> i64 {
    let tang: i64 = key.k.iter().zip(dims.sites()).map(|(&k, &j)| k as i64 * j as i64).sum();
    tang + (0..key.beta.len()).map(|s| dims.mode(s) as i64 * (key.beta[s] as i64 - key.gamma[s] as i64)).sum::<i64>()
}

/// `Σ_b |k_b| j_b + Σ_j j(β_j + γ_j)` modulo 2, preserved by the cosine
/// selection rule `i ± j ± k ± l = 0`.
pub fn reflection_parity(dims: &Dims, key: &MonomialKey) -> u32 {
    let tang: i64 = key.k.iter().zip(dims.sites()).map(|(&k, &j)| k.abs() as i64 * j as i64).sum();
    let rest: i64 = (0..key.beta.len()).map(|s| dims.mode(s) as i64 * (key.beta[s] + key.gamma[s]) as i64).sum();
    ((tang + rest) % 2) as u32
}

/// Keys above `tol` whose momentum is nonzero.
pub fn momentum_violations(s: &TFSeries, tol: f64) -> Vec<MonomialKey> {
    s.terms().iter().filter(|(k, c)| c.norm() > tol && momentum(s.dims(), k) != 0).map(|(k, _)| k.clone()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParityKind {
    /// `|k|` even with an odd number of z-factors.
    EvenKBlocks,
    /// `|k|` odd with an even number of z-factors.
    OddKBlocks,
    /// `k = 0` terms linear in the zero-frequency variables.
    ZeroModeLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityViolation {
    pub kind: ParityKind,
    pub k: Vec<i32>,
    pub alpha: Vec<u32>,
    pub z_degree: u32,
    pub modulus: f64,
}

/// Terms of modulus above `tol` that break the selected rule.
pub fn parity_check(r: &TFSeries, which: ParityKind, tol: f64) -> Vec<ParityViolation> {
    let dims = r.dims();
    let zslots: BTreeSet<usize> = dims.zero_slots().into_iter().collect();
    r.terms()
        .iter()
        .filter(|(_, c)| c.norm() > tol)
        .filter(|(key, _)| {
            let keven = key.k_norm() % 2 == 0;
            let zodd = key.z_degree() % 2 == 1;
            match which {
                ParityKind::EvenKBlocks => keven && zodd,
                ParityKind::OddKBlocks => !keven && !zodd,
                ParityKind::ZeroModeLinear => {
                    key.k_is_zero()
                        && key.y_degree() == 0
                        && key.z_degree() == 1
                        && (0..key.beta.len()).any(|s| key.beta[s] + key.gamma[s] == 1 && zslots.contains(&s))
                }
            }
        })
        .map(|(key, c)| ParityViolation { kind: which, k: key.k.to_vec(), alpha: key.alpha.to_vec(), z_degree: key.z_degree(), modulus: c.norm() })
        .collect()
}

/// A family of Fourier index vectors: value patterns placed at arbitrary
/// distinct positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexFamily {
    pub name: String,
    pub patterns: Vec<Vec<i32>>,
}

impl IndexFamily {
    fn of(name: &str, patterns: &[&[i32]]) -> Self {
        IndexFamily { name: name.into(), patterns: patterns.iter().map(|p| p.to_vec()).collect() }
    }

    pub fn v1() -> Self {
        Self::of("V1", &[&[-1, 1, 1], &[-1, 2], &[1], &[1, -1, -1], &[1, -2], &[-1]])
    }
    pub fn v2() -> Self {
        Self::of("V2", &[&[-1, 1], &[1, -1], &[1, 1], &[-1, -1], &[2], &[-2]])
    }
    pub fn v3() -> Self {
        Self::of("V3", &[&[-1], &[1], &[-1, 1, 1], &[-1, 2], &[1], &[1, -1, -1], &[1, -2], &[-1]])
    }
    pub fn v4() -> Self {
        Self::of(
            "V4",
            &[
                &[-1, 1],
                &[1, -1],
                &[1, 1],
                &[-1, -1],
                &[2],
                &[-2],
                &[-1, -1, 1, 1],
                &[1, 1, -1, -1],
                &[-1, -1, 2],
                &[1, 1, -2],
                &[-1, 1],
                &[1, -1],
                &[-2, 2],
                &[2, -2],
            ],
        )
    }
    pub fn zero() -> Self {
        Self::of("Zero", &[&[]])
    }

    /// Members in `Z^n`.
    pub fn members(&self, n: usize) -> Vec<Vec<i32>> {
        fn place(p: &[i32], n: usize, cur: &mut Vec<i32>, used: &mut Vec<bool>, out: &mut BTreeSet<Vec<i32>>) {
            if p.is_empty() {
                out.insert(cur.clone());
                return;
            }
            for pos in 0..n {
                if !used[pos] {
                    used[pos] = true;
                    cur[pos] = p[0];
                    place(&p[1..], n, cur, used, out);
                    cur[pos] = 0;
                    used[pos] = false;
                }
            }
        }
        let mut out = BTreeSet::new();
        for p in &self.patterns {
            if p.len() <= n {
                place(p, n, &mut vec![0; n], &mut vec![false; n], &mut out);
            }
        }
        out.into_iter().collect()
    }

    /// `{k·v₀}` with `v₀ = (1,…,1)`.
    pub fn v0_values(&self) -> BTreeSet<i32> {
        self.patterns.iter().map(|p| p.iter().sum()).collect()
    }
}

/// `false` when `k + l + … = 0` with one vector from each family is ruled
/// out by pairing with `v₀ = (1,…,1)`.
pub fn index_solvability(families: &[IndexFamily]) -> bool {
    let mut sums: BTreeSet<i32> = [0].into_iter().collect();
    for f in families {
        let vals = f.v0_values();
        sums = sums.iter().flat_map(|s| vals.iter().map(move |v| s + v)).collect();
    }
    sums.contains(&0)
}
