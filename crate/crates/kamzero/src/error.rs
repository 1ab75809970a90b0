use thiserror::Error;

use crate::homological::ResonanceCondition;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum KamError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular system (|det| = {det:e})")]
    SingularSystem { det: f64 },
    #[error("resonant parameter: {0}")]
    ResonantParameter(Box<ResonanceCondition>),
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("premise failed: {0}")]
    PremiseFailed(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KamError>;
