//! Sparse truncated Taylor–Fourier series in the phase variables
//! `(x, y, z*, z̄*)` at a fixed parameter sample.
//!
//! A term is `c · e^{i⟨k,x⟩} y^α Π z_j^{β_j} z̄_j^{γ_j}`.  The exponents of
//! the z-variables are stored densely over the z-slots of [`Dims`] (the
//! zero-frequency modes together with the normal tail), which keeps keys
//! cheap to hash and compare.

use std::collections::btree_map::Entry;
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustc_hash::FxHashMap as HashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{KamError, Result};

pub type C64 = Complex64;

/// The imaginary unit.
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Relative rounding allowance charged per accumulated product.
const ROUNDING: f64 = 4.0 * f64::EPSILON;

/// Terms of the left operand handled by one worker in bracket/product loops.
/// Fixed so that the summation order never depends on the thread count.
const CHUNK: usize = 32;

/// Phase-space layout: number of angles, tangential sites, zero-frequency
/// modes and the normal-mode cutoff.
#[derive(Clone, Debug)]
pub struct Dims {
    n: usize,
    sites: Vec<u32>,
    zero_modes: Vec<u32>,
    jmax: u32,
    slots: Vec<u32>,
    slot_of: Vec<Option<usize>>,
}

impl PartialEq for Dims {
    fn eq(&self, o: &Self) -> bool {
        self.n == o.n && self.sites == o.sites && self.zero_modes == o.zero_modes && self.jmax == o.jmax
    }
}

impl Dims {
    /// `sites` and `zero_modes` must be strictly increasing, disjoint, and
    /// zero modes must not exceed `jmax`.  Normal modes are
    /// `{1..=jmax} \ (sites ∪ zero_modes)`.
    pub fn new(n: usize, sites: &[u32], zero_modes: &[u32], jmax: u32) -> Result<Arc<Dims>> {
        let increasing = |v: &[u32]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(sites) || !increasing(zero_modes) {
            return Err(KamError::Domain("site and zero-mode lists must be strictly increasing".into()));
        }
        if !sites.is_empty() && sites.len() != n {
            return Err(KamError::DimensionMismatch(format!("{} sites for n = {}", sites.len(), n)));
        }
        if sites.contains(&0) {
            return Err(KamError::Domain("tangential sites must be positive".into()));
        }
        if zero_modes.iter().any(|j| sites.contains(j)) {
            return Err(KamError::Domain("a zero mode coincides with a tangential site".into()));
        }
        if zero_modes.iter().any(|&j| j > jmax) {
            return Err(KamError::Domain("zero modes must not exceed jmax".into()));
        }
        let mut slots: Vec<u32> = zero_modes.to_vec();
        slots.extend((1..=jmax).filter(|j| !sites.contains(j) && !zero_modes.contains(j)));
        slots.sort_unstable();
        let mut slot_of = vec![None; jmax as usize + 1];
        for (s, &j) in slots.iter().enumerate() {
            slot_of[j as usize] = Some(s);
        }
        Ok(Arc::new(Dims { n, sites: sites.to_vec(), zero_modes: zero_modes.to_vec(), jmax, slots, slot_of }))
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn b(&self) -> usize {
        self.zero_modes.len()
    }
    pub fn sites(&self) -> &[u32] {
        &self.sites
    }
    pub fn zero_modes(&self) -> &[u32] {
        &self.zero_modes
    }
    pub fn jmax(&self) -> u32 {
        self.jmax
    }
    /// Mode index of every z-slot, increasing.
    pub fn slots(&self) -> &[u32] {
        &self.slots
    }
    pub fn nslots(&self) -> usize {
        self.slots.len()
    }
    pub fn slot(&self, mode: u32) -> Option<usize> {
        self.slot_of.get(mode as usize).copied().flatten()
    }
    pub fn mode(&self, slot: usize) -> u32 {
        self.slots[slot]
    }
    pub fn is_zero_slot(&self, slot: usize) -> bool {
        self.zero_modes.contains(&self.slots[slot])
    }
    /// Slots of the zero-frequency modes in the order `j₁ < … < j_b`.
    pub fn zero_slots(&self) -> Vec<usize> {
        self.zero_modes.iter().map(|&j| self.slot(j).unwrap()).collect()
    }
    pub fn normal_modes(&self) -> Vec<u32> {
        self.slots.iter().copied().filter(|j| !self.zero_modes.contains(j)).collect()
    }
    pub fn normal_slots(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&s| !self.is_zero_slot(s)).collect()
    }
    pub fn key(&self) -> KeyBuilder<'_> {
        KeyBuilder { dims: self, key: MonomialKey::unit(self) }
    }
}

pub type KVec = SmallVec<[i32; 4]>;
pub type EVec = SmallVec<[u32; 4]>;
pub type ZVec = SmallVec<[u32; 12]>;

/// Exponent data of one monomial.  `beta`/`gamma` are indexed by z-slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MonomialKey {
    pub k: KVec,
    pub alpha: EVec,
    pub beta: ZVec,
    pub gamma: ZVec,
}

impl MonomialKey {
    pub fn unit(dims: &Dims) -> Self {
        MonomialKey {
            k: SmallVec::from_elem(0, dims.n),
            alpha: SmallVec::from_elem(0, dims.n),
            beta: SmallVec::from_elem(0, dims.nslots()),
            gamma: SmallVec::from_elem(0, dims.nslots()),
        }
    }
    /// `2|α| + |β| + |γ|`.
    pub fn degree(&self) -> u32 {
        2 * self.alpha.iter().sum::<u32>() + self.z_degree()
    }
    pub fn z_degree(&self) -> u32 {
        self.beta.iter().sum::<u32>() + self.gamma.iter().sum::<u32>()
    }
    pub fn y_degree(&self) -> u32 {
        self.alpha.iter().sum()
    }
    /// `|k| = Σ |k_b|`.
    pub fn k_norm(&self) -> u32 {
        self.k.iter().map(|v| v.unsigned_abs()).sum()
    }
    pub fn k_is_zero(&self) -> bool {
        self.k.iter().all(|&v| v == 0)
    }
    /// Key of the complex-conjugate partner `(−k, α, γ, β)`.
    pub fn reflect(&self) -> Self {
        MonomialKey {
            k: self.k.iter().map(|v| -v).collect(),
            alpha: self.alpha.clone(),
            beta: self.gamma.clone(),
            gamma: self.beta.clone(),
        }
    }
}

/// Fluent constructor for keys.  Panics on a mode that is not a z-slot.
pub struct KeyBuilder<'a> {
    dims: &'a Dims,
    key: MonomialKey,
}

impl<'a> KeyBuilder<'a> {
    pub fn k(mut self, k: &[i32]) -> Self {
        assert_eq!(k.len(), self.dims.n, "Fourier index length");
        self.key.k = k.iter().copied().collect();
        self
    }
    pub fn y(mut self, b: usize, e: u32) -> Self {
        self.key.alpha[b] += e;
        self
    }
    pub fn z(mut self, mode: u32, e: u32) -> Self {
        let s = self.dims.slot(mode).unwrap_or_else(|| panic!("mode {mode} is not a z-slot"));
        self.key.beta[s] += e;
        self
    }
    pub fn zb(mut self, mode: u32, e: u32) -> Self {
        let s = self.dims.slot(mode).unwrap_or_else(|| panic!("mode {mode} is not a z-slot"));
        self.key.gamma[s] += e;
        self
    }
    pub fn build(self) -> MonomialKey {
        self.key
    }
}

/// Truncation budgets.  `prune_tol` is relative to the largest coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub d_max: u32,
    pub k_max: u32,
    pub prune_tol: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { d_max: 6, k_max: 64, prune_tol: 1e-16 }
    }
}

/// Complex neighbourhood `D(s, r, r)` with the `ℓ^{a,p}` weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub s: f64,
    pub r: f64,
    pub a: f64,
    pub p: f64,
}

impl DomainParams {
    pub fn new(s: f64, r: f64, a: f64, p: f64) -> Result<Self> {
        let dp = DomainParams { s, r, a, p };
        dp.validate()?;
        Ok(dp)
    }
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.r > 0.0 && self.a > 0.0 && self.p > 0.5) {
            return Err(KamError::Domain(format!("invalid domain parameters {self:?}")));
        }
        Ok(())
    }
    /// `w_j = max(j,1)^p e^{aj}`.
    pub fn weight(&self, mode: u32) -> f64 {
        (mode.max(1) as f64).powf(self.p) * (self.a * mode as f64).exp()
    }
}

/// Evaluation point; `z`/`zb` are indexed by slot and treated as
/// independent variables.
#[derive(Clone, Debug)]
pub struct Point {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub z: Vec<C64>,
    pub zb: Vec<C64>,
}

impl Point {
    pub fn origin(dims: &Dims) -> Self {
        Point {
            x: vec![C64::new(0.0, 0.0); dims.n()],
            y: vec![C64::new(0.0, 0.0); dims.n()],
            z: vec![C64::new(0.0, 0.0); dims.nslots()],
            zb: vec![C64::new(0.0, 0.0); dims.nslots()],
        }
    }
}

/// Result of [`TFSeries::fourier_truncate`].
#[derive(Clone, Debug)]
pub struct FourierSplit {
    pub trunc: TFSeries,
    pub tail: TFSeries,
    /// ‖tail‖ on `D(s−σ, r, r)`.
    pub tail_norm: f64,
    /// `4^n K^n e^{−Kσ} ‖R‖_{D(s,r,r)}`.
    pub bound: f64,
    pub ratio: f64,
}

/// Result of [`TFSeries::lie_transform`].
#[derive(Clone, Debug)]
pub struct LieOutcome {
    pub series: TFSeries,
    /// Sum of truncation and rounding mass over all brackets.
    pub dropped: f64,
    /// ℓ¹ mass of the first omitted Lie term.
    pub remainder: f64,
}

/// Sparse Taylor–Fourier series.
#[derive(Clone, Debug)]
pub struct TFSeries {
    dims: Arc<Dims>,
    budgets: Budgets,
    terms: BTreeMap<MonomialKey, C64>,
    dropped: f64,
    real: bool,
}

type Accum = (HashMap<MonomialKey, C64>, f64, f64);

fn merge(chunks: Vec<Accum>) -> (BTreeMap<MonomialKey, C64>, f64, f64) {
    let mut out: BTreeMap<MonomialKey, C64> = BTreeMap::new();
    let (mut dropped, mut abs) = (0.0, 0.0);
    for (map, d, a) in chunks {
        dropped += d;
        abs += a;
        for (key, c) in map {
            *out.entry(key).or_insert(C64::new(0.0, 0.0)) += c;
        }
    }
    (out, dropped, abs)
}

impl TFSeries {
    pub fn new(dims: Arc<Dims>, budgets: Budgets) -> Self {
        TFSeries { dims, budgets, terms: BTreeMap::new(), dropped: 0.0, real: true }
    }

    pub fn from_terms<It: IntoIterator<Item = (MonomialKey, C64)>>(dims: Arc<Dims>, budgets: Budgets, it: It) -> Self {
        let mut s = TFSeries::new(dims, budgets);
        for (k, c) in it {
            s.add_term(k, c);
        }
        s
    }

    pub fn dims(&self) -> &Arc<Dims> {
        &self.dims
    }
    pub fn budgets(&self) -> Budgets {
        self.budgets
    }
    pub fn terms(&self) -> &BTreeMap<MonomialKey, C64> {
        &self.terms
    }
    pub fn iter(&self) -> impl Iterator<Item = (&MonomialKey, &C64)> {
        self.terms.iter()
    }
    pub fn len(&self) -> usize {
        self.terms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
    /// Truncation plus rounding mass attributed to the operation that
    /// produced this series.
    pub fn dropped(&self) -> f64 {
        self.dropped
    }
    pub fn set_dropped(&mut self, d: f64) {
        self.dropped = d;
    }
    /// Whether the reality flag is set.
    pub fn is_real(&self) -> bool {
        self.real
    }
    pub fn coeff(&self, key: &MonomialKey) -> C64 {
        self.terms.get(key).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn admits(&self, key: &MonomialKey) -> bool {
        key.degree() <= self.budgets.d_max && key.k_norm() <= self.budgets.k_max
    }

    fn same_dims(&self, o: &TFSeries) -> Result<()> {
        if Arc::ptr_eq(&self.dims, &o.dims) || *self.dims == *o.dims {
            Ok(())
        } else {
            Err(KamError::DimensionMismatch(format!("{:?} vs {:?}", self.dims, o.dims)))
        }
    }

    /// Adds `c` to the coefficient of `key`; out-of-budget terms go to the
    /// dropped mass.  Clears the reality flag.
    pub fn add_term(&mut self, key: MonomialKey, c: C64) {
        self.real = false;
        self.add_raw(key, c);
    }

    fn add_raw(&mut self, key: MonomialKey, c: C64) {
        if c == C64::new(0.0, 0.0) {
            return;
        }
        if !self.admits(&key) {
            self.dropped += c.norm();
            return;
        }
        match self.terms.entry(key) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == C64::new(0.0, 0.0) {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn remove(&mut self, key: &MonomialKey) -> C64 {
        self.terms.remove(key).unwrap_or(C64::new(0.0, 0.0))
    }

    /// Re-truncates to new budgets.
    pub fn with_budgets(&self, budgets: Budgets) -> Self {
        let mut out = TFSeries::new(self.dims.clone(), budgets);
        out.real = self.real;
        for (k, c) in &self.terms {
            out.add_raw(k.clone(), *c);
        }
        out
    }

    /// Keeps the terms satisfying `pred`.
    pub fn filter<P: Fn(&MonomialKey, &C64) -> bool>(&self, pred: P) -> Self {
        let mut out = TFSeries::new(self.dims.clone(), self.budgets);
        out.terms = self.terms.iter().filter(|(k, c)| pred(k, c)).map(|(k, c)| (k.clone(), *c)).collect();
        out.real = self.real && self.terms.keys().all(|k| pred(k, &C64::new(0.0, 0.0)) == pred(&k.reflect(), &C64::new(0.0, 0.0)));
        out
    }

    pub fn scale(&self, a: C64) -> Self {
        let mut out = TFSeries::new(self.dims.clone(), self.budgets);
        if a != C64::new(0.0, 0.0) {
            out.terms = self.terms.iter().map(|(k, c)| (k.clone(), c * a)).collect();
        }
        out.real = self.real && a.im == 0.0;
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(C64::new(-1.0, 0.0))
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: C64, other: &TFSeries) -> Result<()> {
        self.same_dims(other)?;
        let keep = self.real && other.real && a.im == 0.0;
        for (k, c) in &other.terms {
            self.add_raw(k.clone(), c * a);
        }
        self.real = keep;
        Ok(())
    }

    pub fn add(&self, other: &TFSeries) -> Result<Self> {
        let mut out = self.clone();
        out.dropped = 0.0;
        out.axpy(C64::new(1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &TFSeries) -> Result<Self> {
        let mut out = self.clone();
        out.dropped = 0.0;
        out.axpy(C64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    /// Removes coefficients below `prune_tol · max|c|`; their mass is added
    /// to the dropped metadata.
    pub fn prune(&mut self) {
        let cut = self.budgets.prune_tol * self.max_abs();
        let mut lost = 0.0;
        self.terms.retain(|_, c| {
            let m = c.norm();
            if m <= cut || m == 0.0 {
                lost += m;
                false
            } else {
                true
            }
        });
        self.dropped += lost;
    }

    /// Removes every term whose contribution to the vector-field norm on
    /// `dp` is below `tol`.  Returns the removed contribution.
    pub fn prune_weighted(&mut self, dp: &DomainParams, tol: f64) -> f64 {
        let dims = self.dims.clone();
        let mut lost = 0.0;
        self.terms.retain(|k, c| {
            let v = term_weight(&dims, k, dp) * c.norm() * (1.0 + k.k_norm() as f64 + k.degree() as f64) / (dp.r * dp.r);
            if v < tol {
                lost += v;
                false
            } else {
                true
            }
        });
        self.dropped += lost;
        lost
    }

    /// Poisson bracket
    /// `{F,G} = ⟨F_x,G_y⟩ − ⟨F_y,G_x⟩ + i(⟨F_z,G_z̄⟩ − ⟨F_z̄,G_z⟩)`.
    ///
    /// Operands are put in a canonical order first, so `{G,F}` is the exact
    /// negation of `{F,G}` and `{F,F} = 0`.
    pub fn bracket(&self, other: &TFSeries) -> Result<TFSeries> {
        self.same_dims(other)?;
        match self.canonical_cmp(other) {
            Ordering::Less => self.bracket_ordered(other, self.budgets),
            Ordering::Greater => {
                let mut out = other.bracket_ordered(self, self.budgets)?;
                out.terms.values_mut().for_each(|c| *c = -*c);
                Ok(out)
            }
            Ordering::Equal => {
                let mut out = TFSeries::new(self.dims.clone(), self.budgets);
                out.real = self.real;
                Ok(out)
            }
        }
    }

    fn canonical_cmp(&self, other: &TFSeries) -> Ordering {
        let bits = |c: &C64| (c.re.to_bits(), c.im.to_bits());
        self.terms.len().cmp(&other.terms.len()).then_with(|| {
            self.terms.iter().zip(&other.terms).map(|((k1, c1), (k2, c2))| k1.cmp(k2).then_with(|| bits(c1).cmp(&bits(c2)))).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
    }

    fn bracket_ordered(&self, other: &TFSeries, budgets: Budgets) -> Result<TFSeries> {
        let n = self.dims.n;
        let ns = self.dims.nslots();
        let f: Vec<(&MonomialKey, &C64)> = self.terms.iter().collect();
        let g: Vec<(&MonomialKey, u32, &C64)> = other.terms.iter().map(|(k, c)| (k, k.degree(), c)).collect();
        let chunks: Vec<Accum> = f
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut map: HashMap<MonomialKey, C64> = HashMap::default();
                let (mut dropped, mut abs) = (0.0, 0.0);
                for &(k1, c1) in chunk {
                    let d1 = k1.degree();
                    for &(k2, d2, c2) in &g {
                        if d1 + d2 < 2 {
                            continue;
                        }
                        let within = d1 + d2 - 2 <= budgets.d_max
                            && k1.k.iter().zip(&k2.k).map(|(a, b)| (a + b).unsigned_abs()).sum::<u32>() <= budgets.k_max;
                        let c = c1 * c2;
                        let mut base: Option<MonomialKey> = None;
                        let mut emit = |fac: i64, shape: &dyn Fn(&mut MonomialKey), base: &mut Option<MonomialKey>| {
                            let contrib = c * I * fac as f64;
                            let m = contrib.norm();
                            abs += m;
                            if !within {
                                dropped += m;
                                return;
                            }
                            let b = base.get_or_insert_with(|| MonomialKey {
                                k: k1.k.iter().zip(&k2.k).map(|(a, b)| a + b).collect(),
                                alpha: k1.alpha.iter().zip(&k2.alpha).map(|(a, b)| a + b).collect(),
                                beta: k1.beta.iter().zip(&k2.beta).map(|(a, b)| a + b).collect(),
                                gamma: k1.gamma.iter().zip(&k2.gamma).map(|(a, b)| a + b).collect(),
                            });
                            let mut key = b.clone();
                            shape(&mut key);
                            *map.entry(key).or_insert(C64::new(0.0, 0.0)) += contrib;
                        };
                        for bi in 0..n {
                            let fac = k1.k[bi] as i64 * k2.alpha[bi] as i64 - k1.alpha[bi] as i64 * k2.k[bi] as i64;
                            if fac != 0 {
                                emit(fac, &|key: &mut MonomialKey| key.alpha[bi] -= 1, &mut base);
                            }
                        }
                        for s in 0..ns {
                            let fac = k1.beta[s] as i64 * k2.gamma[s] as i64 - k1.gamma[s] as i64 * k2.beta[s] as i64;
                            if fac != 0 {
                                emit(
                                    fac,
                                    &|key: &mut MonomialKey| {
                                        key.beta[s] -= 1;
                                        key.gamma[s] -= 1;
                                    },
                                    &mut base,
                                );
                            }
                        }
                    }
                }
                (map, dropped, abs)
            })
            .collect();
        Ok(self.finish(chunks, budgets, self.real && other.real))
    }

    fn finish(&self, chunks: Vec<Accum>, budgets: Budgets, real: bool) -> TFSeries {
        let (mut terms, dropped, abs) = merge(chunks);
        terms.retain(|_, c| *c != C64::new(0.0, 0.0));
        let mut out = TFSeries { dims: self.dims.clone(), budgets, terms, dropped: dropped + ROUNDING * abs, real };
        out.prune();
        out
    }

    /// Truncated product.
    pub fn mul(&self, other: &TFSeries) -> Result<TFSeries> {
        self.same_dims(other)?;
        let budgets = self.budgets;
        let f: Vec<(&MonomialKey, &C64)> = self.terms.iter().collect();
        let g: Vec<(&MonomialKey, u32, &C64)> = other.terms.iter().map(|(k, c)| (k, k.degree(), c)).collect();
        let chunks: Vec<Accum> = f
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut map: HashMap<MonomialKey, C64> = HashMap::default();
                let (mut dropped, mut abs) = (0.0, 0.0);
                for &(k1, c1) in chunk {
                    let d1 = k1.degree();
                    for &(k2, d2, c2) in &g {
                        let c = c1 * c2;
                        abs += c.norm();
                        let kn: u32 = k1.k.iter().zip(&k2.k).map(|(a, b)| (a + b).unsigned_abs()).sum();
                        if d1 + d2 > budgets.d_max || kn > budgets.k_max {
                            dropped += c.norm();
                            continue;
                        }
                        let key = MonomialKey {
                            k: k1.k.iter().zip(&k2.k).map(|(a, b)| a + b).collect(),
                            alpha: k1.alpha.iter().zip(&k2.alpha).map(|(a, b)| a + b).collect(),
                            beta: k1.beta.iter().zip(&k2.beta).map(|(a, b)| a + b).collect(),
                            gamma: k1.gamma.iter().zip(&k2.gamma).map(|(a, b)| a + b).collect(),
                        };
                        *map.entry(key).or_insert(C64::new(0.0, 0.0)) += c;
                    }
                }
                (map, dropped, abs)
            })
            .collect();
        Ok(self.finish(chunks, budgets, self.real && other.real))
    }

    fn map_terms<Fm: Fn(&MonomialKey, C64) -> Option<(MonomialKey, C64)>>(&self, f: Fm) -> TFSeries {
        let mut out = TFSeries::new(self.dims.clone(), self.budgets);
        out.real = false;
        for (k, c) in &self.terms {
            if let Some((k2, c2)) = f(k, *c) {
                if c2 != C64::new(0.0, 0.0) {
                    out.terms.insert(k2, c2);
                }
            }
        }
        out
    }

    /// `∂F/∂x_b`.
    pub fn dx(&self, b: usize) -> TFSeries {
        self.map_terms(|k, c| Some((k.clone(), c * I * k.k[b] as f64)))
    }

    /// `∂F/∂y_b`.
    pub fn dy(&self, b: usize) -> TFSeries {
        self.map_terms(|k, c| {
            (k.alpha[b] > 0).then(|| {
                let mut k2 = k.clone();
                k2.alpha[b] -= 1;
                (k2, c * k.alpha[b] as f64)
            })
        })
    }

    /// `∂F/∂z_j` for the mode `j`.
    pub fn dz(&self, mode: u32) -> Result<TFSeries> {
        let s = self.dims.slot(mode).ok_or_else(|| KamError::Domain(format!("mode {mode} is not a z-slot")))?;
        Ok(self.dz_slot(s))
    }

    /// `∂F/∂z̄_j` for the mode `j`.
    pub fn dzb(&self, mode: u32) -> Result<TFSeries> {
        let s = self.dims.slot(mode).ok_or_else(|| KamError::Domain(format!("mode {mode} is not a z-slot")))?;
        Ok(self.dzb_slot(s))
    }

    pub fn dz_slot(&self, s: usize) -> TFSeries {
        self.map_terms(|k, c| {
            (k.beta[s] > 0).then(|| {
                let mut k2 = k.clone();
                k2.beta[s] -= 1;
                (k2, c * k.beta[s] as f64)
            })
        })
    }

    pub fn dzb_slot(&self, s: usize) -> TFSeries {
        self.map_terms(|k, c| {
            (k.gamma[s] > 0).then(|| {
                let mut k2 = k.clone();
                k2.gamma[s] -= 1;
                (k2, c * k.gamma[s] as f64)
            })
        })
    }

    /// Coefficient majorant `Σ |c| e^{|k|s} r^{2|α|} Π (r/w_j)^{β_j+γ_j}`.
    pub fn weighted_norm(&self, dp: &DomainParams) -> f64 {
        self.terms.iter().map(|(k, c)| c.norm() * term_weight(&self.dims, k, dp)).sum()
    }

    /// `‖F_y‖ + ‖F_x‖/r² + (1/r)(Σ‖F_{z̄_j}‖² w_j²)^{1/2} + (1/r)(Σ‖F_{z_j}‖² w_j²)^{1/2}`,
    /// with the sup norm over the components of `F_y` and `F_x`.
    pub fn vector_field_norm(&self, dp: &DomainParams) -> f64 {
        let n = self.dims.n;
        let ns = self.dims.nslots();
        let mut ny = vec![0.0; n];
        let mut nx = vec![0.0; n];
        let mut nz = vec![0.0; ns];
        let mut nzb = vec![0.0; ns];
        let r2 = dp.r * dp.r;
        for (k, c) in &self.terms {
            let w = c.norm() * term_weight(&self.dims, k, dp);
            if w == 0.0 {
                continue;
            }
            for b in 0..n {
                if k.alpha[b] > 0 {
                    ny[b] += w * k.alpha[b] as f64 / r2;
                }
                if k.k[b] != 0 {
                    nx[b] += w * k.k[b].unsigned_abs() as f64;
                }
            }
            for s in 0..ns {
                let zw = dp.r / dp.weight(self.dims.slots[s]);
                if k.beta[s] > 0 {
                    nz[s] += w * k.beta[s] as f64 / zw;
                }
                if k.gamma[s] > 0 {
                    nzb[s] += w * k.gamma[s] as f64 / zw;
                }
            }
        }
        let fy = ny.iter().cloned().fold(0.0, f64::max);
        let fx = nx.iter().cloned().fold(0.0, f64::max);
        let zpart = |v: &[f64]| {
            let s: f64 = v.iter().enumerate().map(|(s, x)| (x * dp.weight(self.dims.slots[s])).powi(2)).sum();
            s.sqrt() / dp.r
        };
        fy + fx / r2 + zpart(&nzb) + zpart(&nz)
    }

    /// Splits into `2|α|+|β|+|γ| ≤ 2` and `≥ 3`.
    pub fn split_low_high(&self) -> (TFSeries, TFSeries) {
        let low = self.filter(|k, _| k.degree() <= 2);
        let high = self.filter(|k, _| k.degree() > 2);
        (low, high)
    }

    /// Keeps `|k| ≤ K`; the tail is compared with `4^n K^n e^{−Kσ}‖R‖`.
    pub fn fourier_truncate(&self, kcut: f64, sigma: f64, dp: &DomainParams) -> Result<FourierSplit> {
        if kcut <= 0.0 {
            return Err(KamError::Domain("Fourier cutoff must be positive".into()));
        }
        if sigma <= 0.0 || sigma >= dp.s {
            return Err(KamError::Domain(format!("σ = {sigma} must lie in (0, s = {})", dp.s)));
        }
        let trunc = self.filter(|k, _| k.k_norm() as f64 <= kcut);
        let tail = self.filter(|k, _| k.k_norm() as f64 > kcut);
        let inner = DomainParams { s: dp.s - sigma, ..*dp };
        let tail_norm = tail.weighted_norm(&inner);
        let n = self.dims.n as i32;
        let bound = 4f64.powi(n) * kcut.powi(n) * (-kcut * sigma).exp() * self.weighted_norm(dp);
        let ratio = if bound > 0.0 { tail_norm / bound } else { 0.0 };
        Ok(FourierSplit { trunc, tail, tail_norm, bound, ratio })
    }

    /// `Σ_{n=0}^{order} (1/n!) ad_F^n H` with `ad_F H = {H, F}`.
    pub fn lie_transform(&self, f: &TFSeries, order: usize) -> Result<LieOutcome> {
        self.same_dims(f)?;
        let mut sum = self.clone();
        sum.dropped = 0.0;
        let mut term = self.clone();
        let mut dropped = 0.0;
        for n in 1..=order {
            term = term.bracket(f)?.scale(C64::new(1.0 / n as f64, 0.0));
            dropped += term.dropped;
            sum.axpy(C64::new(1.0, 0.0), &term)?;
        }
        let next = term.bracket(f)?.scale(C64::new(1.0 / (order + 1) as f64, 0.0));
        sum.prune();
        dropped += sum.dropped;
        sum.dropped = dropped;
        Ok(LieOutcome { series: sum, dropped, remainder: next.l1_norm() })
    }

    /// `(F + F*)/2` where `F*` conjugates coefficients and reflects keys.
    pub fn realify(&self) -> TFSeries {
        let mut out = TFSeries::new(self.dims.clone(), self.budgets);
        for (k, c) in &self.terms {
            out.add_raw(k.clone(), c * 0.5);
            out.add_raw(k.reflect(), c.conj() * 0.5);
        }
        out.real = true;
        out
    }

    /// `max |c(k,α,β,γ) − conj c(−k,α,γ,β)|`.
    pub fn reality_defect(&self) -> f64 {
        self.terms.iter().map(|(k, c)| (c - self.coeff(&k.reflect()).conj()).norm()).fold(0.0, f64::max)
    }

    /// Sets the reality flag if the defect is at most `tol · max|c|`.
    pub fn mark_real(&mut self, tol: f64) -> bool {
        self.real = self.reality_defect() <= tol * self.max_abs();
        self.real
    }

    pub fn eval(&self, pt: &Point) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (k, c) in &self.terms {
            let mut phase = C64::new(0.0, 0.0);
            for (b, &kb) in k.k.iter().enumerate() {
                phase += I * pt.x[b] * kb as f64;
            }
            let mut v = c * phase.exp();
            for (b, &e) in k.alpha.iter().enumerate() {
                if e > 0 {
                    v *= pt.y[b].powu(e);
                }
            }
            for s in 0..k.beta.len() {
                if k.beta[s] > 0 {
                    v *= pt.z[s].powu(k.beta[s]);
                }
                if k.gamma[s] > 0 {
                    v *= pt.zb[s].powu(k.gamma[s]);
                }
            }
            acc += v;
        }
        acc
    }

    /// Text serialization: a header line followed by one term per line.
    pub fn to_text(&self) -> String {
        let d = &self.dims;
        let list = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = format!(
            "# tfseries n={} sites=[{}] zero=[{}] jmax={} dmax={} kmax={} prune={:e} real={}\n",
            d.n,
            list(&d.sites),
            list(&d.zero_modes),
            d.jmax,
            self.budgets.d_max,
            self.budgets.k_max,
            self.budgets.prune_tol,
            self.real
        );
        let zmap = |v: &ZVec| {
            v.iter()
                .enumerate()
                .filter(|(_, e)| **e > 0)
                .map(|(s, e)| format!("{}:{}", d.slots[s], e))
                .collect::<Vec<_>>()
                .join(",")
        };
        for (k, c) in &self.terms {
            let kk = k.k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            let aa = k.alpha.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            let _ = writeln!(out, "k=({kk}) a=({aa}) b={{{}}} g={{{}}} c={:e},{:e}", zmap(&k.beta), zmap(&k.gamma), c.re, c.im);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<TFSeries> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| KamError::Parse("empty series text".into()))?;
        let field = |name: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(name).and_then(|t| t.strip_prefix('=')))
                .ok_or_else(|| KamError::Parse(format!("header lacks `{name}`")))
        };
        let num = |s: &str| s.parse::<u64>().map_err(|e| KamError::Parse(format!("{s}: {e}")));
        let ulist = |s: &str| -> Result<Vec<u32>> {
            let inner = s.trim_start_matches('[').trim_end_matches(']');
            inner.split(',').filter(|t| !t.is_empty()).map(|t| num(t).map(|v| v as u32)).collect()
        };
        let n = num(field("n")?)? as usize;
        let dims = Dims::new(n, &ulist(field("sites")?)?, &ulist(field("zero")?)?, num(field("jmax")?)? as u32)?;
        let budgets = Budgets {
            d_max: num(field("dmax")?)? as u32,
            k_max: num(field("kmax")?)? as u32,
            prune_tol: field("prune")?.parse().map_err(|e| KamError::Parse(format!("prune: {e}")))?,
        };
        let real = field("real")? == "true";
        let mut out = TFSeries::new(dims.clone(), budgets);
        for (lineno, line) in lines {
            let bad = |what: &str| KamError::Parse(format!("line {}: {what}", lineno + 1));
            let mut key = MonomialKey::unit(&dims);
            let mut coef = None;
            for tok in line.split_whitespace() {
                let (name, val) = tok.split_once('=').ok_or_else(|| bad("expected name=value"))?;
                match name {
                    "k" | "a" => {
                        let inner = val.trim_start_matches('(').trim_end_matches(')');
                        let vals: Vec<&str> = inner.split(',').filter(|t| !t.is_empty()).collect();
                        if vals.len() != n {
                            return Err(bad("vector length differs from n"));
                        }
                        for (b, v) in vals.iter().enumerate() {
                            if name == "k" {
                                key.k[b] = v.parse().map_err(|_| bad("bad Fourier index"))?;
                            } else {
                                key.alpha[b] = v.parse().map_err(|_| bad("bad action exponent"))?;
                            }
                        }
                    }
                    "b" | "g" => {
                        let inner = val.trim_start_matches('{').trim_end_matches('}');
                        for pair in inner.split(',').filter(|t| !t.is_empty()) {
                            let (j, e) = pair.split_once(':').ok_or_else(|| bad("expected mode:exponent"))?;
                            let j: u32 = j.parse().map_err(|_| bad("bad mode"))?;
                            let e: u32 = e.parse().map_err(|_| bad("bad exponent"))?;
                            let s = dims.slot(j).ok_or_else(|| bad("mode is not a z-slot"))?;
                            if name == "b" {
                                key.beta[s] = e;
                            } else {
                                key.gamma[s] = e;
                            }
                        }
                    }
                    "c" => {
                        let (re, im) = val.split_once(',').ok_or_else(|| bad("expected RE,IM"))?;
                        coef = Some(C64::new(
                            re.parse().map_err(|_| bad("bad real part"))?,
                            im.parse().map_err(|_| bad("bad imaginary part"))?,
                        ));
                    }
                    _ => return Err(bad("unknown field")),
                }
            }
            out.add_raw(key, coef.ok_or_else(|| bad("missing coefficient"))?);
        }
        out.real = real;
        Ok(out)
    }
}

/// `e^{|k|s} r^{2|α|} Π (r/w_j)^{β_j+γ_j}`.
pub fn term_weight(dims: &Dims, k: &MonomialKey, dp: &DomainParams) -> f64 {
    let mut w = (k.k_norm() as f64 * dp.s).exp() * dp.r.powi(2 * k.y_degree() as i32);
    for s in 0..k.beta.len() {
        let e = k.beta[s] + k.gamma[s];
        if e > 0 {
            w *= (dp.r / dp.weight(dims.slots[s])).powi(e as i32);
        }
    }
    w
}
