//! Fixtures shared by the engine benchmarks.

use kamzero::kam::schedule;
use kamzero::synthetic::{self, SyntheticProblem, SyntheticSpec};
use kamzero::{BaseParams, DenseMatrix, DomainParams, KamParams, C64};

pub fn domain() -> DomainParams {
    DomainParams { s: 0.75, r: 0.1, a: 0.1, p: 1.0 }
}

pub fn base() -> BaseParams {
    BaseParams { n: 2, b: 1, tau: 3.5, s1: 1.0, r1: 0.1, gamma1: 0.01, a: 0.1, p: 1.0 }
}

/// The default synthetic problem (`n = 2`, one zero mode, `J_max = 8`).
pub fn problem() -> SyntheticProblem {
    synthetic::build(&SyntheticSpec::default(), &domain()).expect("default synthetic spec builds")
}

pub fn step_params() -> KamParams {
    schedule(1, &base(), 1e-6, 0.1)
}

/// Deterministic well-conditioned `n × n` matrix.
pub fn test_matrix(n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, n, |i, j| {
        let t = (i * n + j) as f64;
        C64::new((1.3 * t).sin(), (0.7 * t).cos()) + if i == j { C64::new(n as f64, 0.0) } else { C64::new(0.0, 0.0) }
    })
}
