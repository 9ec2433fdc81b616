use thiserror::Error;

/// Errors raised by the MRAC kernel, models and simulation engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MracError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix is not Hurwitz: {0}")]
    NotHurwitz(String),

    #[error("matrix is rank deficient (sigma_min = {sigma_min:e}, tolerance = {tolerance:e})")]
    RankDeficient { sigma_min: f64, tolerance: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matching condition infeasible: {0}")]
    MatchingInfeasible(String),

    #[error("parameter vector outside projection region (norm {norm}, radius {radius})")]
    OutsideRegion { norm: f64, radius: f64 },

    #[error("excitation check needs at least 2 strictly increasing samples, got {0}")]
    TooFewSamples(usize),

    #[error("non-finite or diverging state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("ground truth unavailable for diagnostics")]
    TruthUnavailable,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, MracError>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, got: impl ToString) -> MracError {
    MracError::DimensionMismatch {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
