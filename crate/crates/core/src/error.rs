use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The KKT matrix has `defect` numerically zero singular values.
    #[error("singular KKT system of size {size}: rank defect {defect}")]
    SingularKkt { size: usize, defect: usize },

    #[error("non-finite residual at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("power iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("invalid problem: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
