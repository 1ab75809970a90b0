//! Numerical KAM iteration for Hamiltonians whose normal form has zero
//! normal frequencies, with a cubic NLS front end.

pub mod config;
pub mod error;
pub mod homological;
pub mod kam;
pub mod matrix;
pub mod measure;
pub mod nls;
pub mod pipeline;
pub mod report;
pub mod series;
pub mod synthetic;

pub use error::{KamError, Result};
pub use homological::{solve_homological, Family, HomReport, HomSolution, NormalForm, ResonanceCondition};
pub use kam::{run, BaseParams, IterationReport, KamParams, RunOptions, StepRecord, Verdict};
pub use matrix::DenseMatrix;
pub use measure::{estimate_excluded, MeasureReport, ParameterGrid};
pub use nls::NlsModel;
pub use series::{Budgets, Dims, DomainParams, MonomialKey, Point, TFSeries, C64};
