use thiserror::Error;

use crate::glm::EpsilonFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at row {row}: {msg}")]
    Validation { row: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("covariate carries no information (identically zero)")]
    NoInformation,

    #[error("solver did not converge: {msg}")]
    NonConvergence { msg: String, best: EpsilonFit },

    #[error("fluctuation covariate is zero but the influence-curve mean is {eic_norm:e}")]
    Inconsistent { eic_norm: f64 },

    #[error("weighted targeting requires a parameter whose clever covariate has a propensity denominator")]
    WeightedUnsupported,

    #[error("unknown parameter `{0}` (valid: tsm1, tsm0, ate, tsm-vector)")]
    UnknownParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
