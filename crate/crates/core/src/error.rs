use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range (len {len})")]
    InvalidIndex { index: usize, len: usize },

    #[error("zero distance between user and base station: pathloss is singular")]
    SingularPathloss,

    #[error("zero large-scale gain for cell {cell}, user {user}")]
    ZeroGain { cell: usize, user: usize },

    #[error("unsupported pilot reuse factor {0} (expected one of 1, 3, 4, 7)")]
    UnsupportedReuse(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("negative estimation error variance {0:e}: inconsistent inputs")]
    NegativeVariance(f64),

    #[error("precoder direction has zero norm in every realization")]
    ZeroDirection,

    #[error("SINR denominator is not positive for cell {cell}, user {user}; increase the number of realizations")]
    NegativeDenominator { cell: usize, user: usize },

    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("deterministic equivalent produced a nonpositive quantity: {0}")]
    NonPositive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::NegativeVariance(_)
                | Error::ZeroDirection
                | Error::NegativeDenominator { .. }
                | Error::NoConvergence { .. }
                | Error::NonPositive(_)
        )
    }
}
