use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The variants map onto coarse categories the CLI turns into exit codes:
/// input/parse problems, data problems, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("area '{area}' has no neighbours; CAR priors need every area to have at least one")]
    Island { area: String },

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e} below -{threshold:e})")]
    NotPsd { eigenvalue: f64, threshold: f64 },

    #[error("cholesky factorisation failed even with jitter {jitter:e}")]
    Cholesky { jitter: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("value out of representable range: {0}")]
    Range(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. } | Error::Cholesky { .. } | Error::Numerical(_) | Error::Range(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
