use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrafsError {
    #[error("operator is not Hermitian: max |H - H^dagger| entry is {max_asymmetry:e}")]
    NotHermitian { max_asymmetry: f64 },

    #[error("operator is not unitary: max |U^dagger U - 1| entry is {deviation:e}")]
    NotUnitary { deviation: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("input sequence is not unit norm (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("endpoint filter removed every sequence (smallest endpoint ratio {smallest_ratio:e})")]
    EmptyFilter { smallest_ratio: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("numerical failure at iteration {iteration}: {reason}")]
    Numerical {
        iteration: usize,
        reason: String,
        /// Flattened coefficients at the failing iterate.
        iterate: Vec<f64>,
    },

    #[error("degenerate least-squares design: {0}")]
    DegenerateFit(String),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("no successful duration found below the growth cap ({cap})")]
    BoundInfeasible { cap: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GrafsError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> GrafsError {
    GrafsError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
