use thiserror::Error;

/// Errors produced anywhere in the model, estimation or inference chain.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the formula is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("input too short: need at least {required} samples, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("frequency grids do not match: {0}")]
    GridMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no root of theta*(f) = phi on [{f_min_hz}, {f_max_hz}] Hz")]
    NoRoot { f_min_hz: f64, f_max_hz: f64 },

    #[error("fit problem is not identifiable: {0}")]
    Unidentifiable(String),

    #[error("optimizer did not converge after {iterations} iterations (best objective {best_objective:e})")]
    NonConvergence { iterations: usize, best_objective: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
