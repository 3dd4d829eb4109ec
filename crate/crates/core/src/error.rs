use thiserror::Error;

/// Errors raised by the trajectory toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("a Kraus family needs at least one operator")]
    EmptyFamily,

    #[error("family is not stochastic: residual {residual:e} exceeds tolerance {tolerance:e}")]
    NonStochastic { residual: f64, tolerance: f64 },

    #[error("branch has vanishing weight {weight:e} (probability-zero event)")]
    ZeroBranch { weight: f64 },

    #[error("index {index} out of range for a family of {count} operators")]
    InvalidIndex { index: usize, count: usize },

    #[error("channel fixed space has dimension {dim}; the fixed point is not unique")]
    NonUniqueFixedPoint { dim: usize },

    #[error("ergodicity has not been verified for this family")]
    ErgodicityNotVerified,

    #[error("Poisson solver did not converge after {blocks} blocks (last increment {last_increment:e})")]
    NoConvergence { blocks: usize, last_increment: f64 },

    #[error("measure has {atoms} atoms, above the solver limit of {limit}")]
    SizeLimit { atoms: usize, limit: usize },

    #[error("need at least {needed} usable points, found {found}")]
    InsufficientPoints { found: usize, needed: usize },

    #[error("asymptotic variance {gamma_sq:e} is not positive")]
    DegenerateVariance { gamma_sq: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
