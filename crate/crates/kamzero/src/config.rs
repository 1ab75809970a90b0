//! Run configuration: `key = value` lines under `[section]` headers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::homological::Family;
use crate::kam::{BaseParams, RunOptions, EPS_FLOOR};
use crate::measure::ParameterGrid;
use crate::nls::NlsModel;
use crate::series::{Budgets, DomainParams};
use crate::synthetic::SyntheticSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Nls,
    Synthetic,
    Measure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n: Option<usize>,
    pub sites: Option<Vec<u32>>,
    pub xi: Option<Vec<f64>>,
    #[serde(rename = "Jmax", alias = "jmax", alias = "J_max")]
    pub jmax: u32,
    pub taylor_depth: u32,
    pub zero_modes: Vec<u32>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { n: None, sites: None, xi: None, jmax: 8, taylor_depth: 2, zero_modes: vec![0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub s1: f64,
    pub r1: f64,
    pub gamma1: f64,
    pub tau: f64,
    pub eps0: f64,
    pub a: f64,
    pub p: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { s1: 1.0, r1: 0.05, gamma1: 1e-5, tau: 3.5, eps0: 1e-6, a: 0.1, p: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetsSection {
    #[serde(alias = "D_max")]
    pub d_max: u32,
    #[serde(alias = "K_max")]
    pub k_max: u32,
    pub prune_tol: f64,
    pub max_steps: u32,
    pub kcut_max: f64,
    pub lie_order_cap: usize,
    pub prune_rel: f64,
    pub eps_floor: f64,
}

impl Default for BudgetsSection {
    fn default() -> Self {
        let o = RunOptions::default();
        BudgetsSection {
            d_max: 6,
            k_max: 64,
            prune_tol: 1e-16,
            max_steps: o.max_steps,
            kcut_max: o.kcut_max,
            lie_order_cap: o.lie_order_cap,
            prune_rel: o.prune_rel,
            eps_floor: EPS_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub samples: Vec<usize>,
    /// γ values to evaluate; empty means `γ₁` only.
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default = "default_grid_kcut")]
    pub kcut: u32,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
}

fn default_grid_kcut() -> u32 {
    6
}

fn default_families() -> Vec<Family> {
    vec![Family::KL]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub k_support: u32,
    pub terms: usize,
    pub block_scale: f64,
    pub zero_mode_mean: bool,
    /// Size of an injected constant `z₀` term.
    pub inject_z0: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        SyntheticSection { k_support: s.k_support, terms: s.terms, block_scale: s.block_scale, zero_mode_mean: s.zero_mode_mean, inject_z0: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub report: String,
    pub trace: String,
    pub series: String,
    pub measure: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            report: "report.json".into(),
            trace: "trace.csv".into(),
            series: "hamiltonian.tfs".into(),
            measure: "measure.csv".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub budgets: BudgetsSection,
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// One field-level problem, with the 1-based line it refers to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Line of `key` inside `[section]` (or of the header when the key is absent).
fn line_of(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Checker<'a> {
    text: &'a str,
    errors: Vec<ConfigError>,
}

impl Checker<'_> {
    fn fail(&mut self, section: &str, key: &str, message: impl Into<String>) {
        let field = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        self.errors.push(ConfigError { line: line_of(self.text, section, key), field, message: message.into() });
    }

    fn positive(&mut self, section: &str, key: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.fail(section, key, format!("must be positive, got {v}"));
        }
    }

    fn nonneg(&mut self, section: &str, key: &str, v: f64) {
        if !(v >= 0.0 && v.is_finite()) {
            self.fail(section, key, format!("must be non-negative, got {v}"));
        }
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> std::result::Result<RunConfig, Vec<ConfigError>> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_at(text, s.start));
        vec![ConfigError { line, field: "config".into(), message: e.message().to_string() }]
    })?;
    let mut c = Checker { text, errors: Vec::new() };
    let m = &cfg.model;
    let n = match cfg.mode {
        Mode::Synthetic => m.n.unwrap_or(2),
        _ => m.n.or(m.sites.as_ref().map(|s| s.len())).unwrap_or(0),
    };
    if n == 0 {
        c.fail("model", "n", "must be at least 1");
    }
    if let Some(given) = m.n {
        if given != n {
            c.fail("model", "n", format!("{given} disagrees with the site list"));
        }
    }
    match cfg.mode {
        Mode::Nls | Mode::Measure => {
            match &m.sites {
                None => c.fail("model", "sites", "missing field"),
                Some(s) => {
                    if s.len() != n {
                        c.fail("model", "sites", format!("{} sites for n = {n}", s.len()));
                    }
                    if s.iter().any(|&j| j == 0 || j > m.jmax) || !s.windows(2).all(|w| w[0] < w[1]) {
                        c.fail("model", "sites", format!("must be increasing in 1..={}", m.jmax));
                    }
                }
            }
            match &m.xi {
                None if cfg.mode == Mode::Nls && cfg.grid.is_none() => c.fail("model", "xi", "missing field"),
                None => {}
                Some(xi) => {
                    if xi.len() != n {
                        c.fail("model", "xi", format!("{} actions for n = {n}", xi.len()));
                    }
                    if xi.iter().any(|&v| !(v > 0.0)) {
                        c.fail("model", "xi", "actions must be positive");
                    }
                }
            }
            if m.zero_modes != [0] {
                c.fail("model", "zero_modes", "the NLS model uses the single zero mode 0");
            }
        }
        Mode::Synthetic => {
            if m.zero_modes.iter().any(|&j| j > m.jmax) {
                c.fail("model", "zero_modes", "must not exceed Jmax");
            }
            if n > 8 {
                c.fail("model", "n", "synthetic problems support n ≤ 8");
            }
        }
    }
    if m.jmax == 0 {
        c.fail("model", "Jmax", "must be positive");
    }
    let s = &cfg.schedule;
    c.positive("schedule", "s1", s.s1);
    c.positive("schedule", "r1", s.r1);
    c.positive("schedule", "gamma1", s.gamma1);
    c.positive("schedule", "eps0", s.eps0);
    c.nonneg("schedule", "a", s.a);
    c.nonneg("schedule", "p", s.p);
    if !(s.tau > n as f64 + 1.0) {
        c.fail("schedule", "tau", format!("must exceed n + 1 = {}, got {}", n + 1, s.tau));
    }
    let b = &cfg.budgets;
    if b.d_max < 2 {
        c.fail("budgets", "d_max", "must be at least 2");
    }
    if b.k_max == 0 {
        c.fail("budgets", "k_max", "must be positive");
    }
    c.nonneg("budgets", "prune_tol", b.prune_tol);
    c.positive("budgets", "kcut_max", b.kcut_max);
    c.nonneg("budgets", "prune_rel", b.prune_rel);
    c.positive("budgets", "eps_floor", b.eps_floor);
    if b.max_steps == 0 {
        c.fail("budgets", "max_steps", "must be positive");
    }
    if b.lie_order_cap == 0 {
        c.fail("budgets", "lie_order_cap", "must be positive");
    }
    match &cfg.grid {
        None if cfg.mode == Mode::Measure => c.fail("grid", "lo", "measure mode needs a [grid] section"),
        None => {}
        Some(g) => {
            if g.lo.len() != n || g.hi.len() != n || g.samples.len() != n {
                c.fail("grid", "samples", format!("lo, hi and samples must have length n = {n}"));
            }
            if g.lo.iter().zip(&g.hi).any(|(a, b)| !(a < b)) {
                c.fail("grid", "hi", "each upper bound must exceed the lower one");
            }
            if cfg.mode != Mode::Synthetic && g.lo.iter().any(|&v| !(v > 0.0)) {
                c.fail("grid", "lo", "actions must be positive");
            }
            if g.samples.iter().any(|&v| v < 2) {
                c.fail("grid", "samples", "need at least 2 samples per axis");
            }
            if g.gamma.iter().any(|&v| !(v >= 0.0)) {
                c.fail("grid", "gamma", "must be non-negative");
            }
        }
    }
    c.nonneg("synthetic", "block_scale", cfg.synthetic.block_scale);
    c.nonneg("synthetic", "inject_z0", cfg.synthetic.inject_z0);
    if c.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(c.errors)
    }
}

impl RunConfig {
    pub fn n(&self) -> usize {
        match self.mode {
            Mode::Synthetic => self.model.n.unwrap_or(2),
            _ => self.model.sites.as_ref().map(|s| s.len()).unwrap_or(0),
        }
    }

    pub fn budgets(&self) -> Budgets {
        Budgets { d_max: self.budgets.d_max, k_max: self.budgets.k_max, prune_tol: self.budgets.prune_tol }
    }

    pub fn base(&self) -> BaseParams {
        let s = &self.schedule;
        let b = match self.mode {
            Mode::Synthetic => self.model.zero_modes.len(),
            _ => 1,
        };
        BaseParams { n: self.n(), b, tau: s.tau, s1: s.s1, r1: s.r1, gamma1: s.gamma1, a: s.a, p: s.p }
    }

    pub fn run_options(&self) -> RunOptions {
        let b = &self.budgets;
        RunOptions {
            max_steps: b.max_steps,
            eps_floor: b.eps_floor,
            kcut_max: b.kcut_max,
            lie_order_cap: b.lie_order_cap,
            prune_rel: b.prune_rel,
            ..RunOptions::default()
        }
    }

    /// Domain of the first step.
    pub fn initial_domain(&self) -> DomainParams {
        let s = &self.schedule;
        DomainParams { s: crate::kam::s_of(1, s.s1), r: s.r1, a: s.a, p: s.p }
    }

    pub fn grid(&self) -> Option<crate::error::Result<ParameterGrid>> {
        self.grid.as_ref().map(|g| ParameterGrid::new(g.lo.clone(), g.hi.clone(), g.samples.clone()))
    }

    /// The NLS model, with `ξ` taken from grid sample `xi_index` when given.
    pub fn nls_model(&self, xi_index: Option<usize>) -> crate::error::Result<NlsModel> {
        let sites = self.model.sites.clone().unwrap_or_default();
        let xi = match xi_index {
            Some(i) => {
                let grid = self.grid().ok_or_else(|| crate::KamError::Domain("--xi-index needs a [grid] section".into()))??;
                if i >= grid.len() {
                    return Err(crate::KamError::Domain(format!("xi index {i} outside a grid of {} samples", grid.len())));
                }
                grid.point(i)
            }
            None => self.model.xi.clone().ok_or_else(|| crate::KamError::Domain("model.xi is missing".into()))?,
        };
        NlsModel::new(sites, xi, self.model.jmax, self.model.taylor_depth)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.synthetic;
        SyntheticSpec {
            n: self.n(),
            zero_modes: self.model.zero_modes.clone(),
            jmax: self.model.jmax,
            eps0: self.schedule.eps0,
            seed: self.seed,
            k_support: s.k_support,
            terms: s.terms,
            block_scale: s.block_scale,
            zero_mode_mean: s.zero_mode_mean,
            budgets: self.budgets(),
        }
    }
}
