use thiserror::Error;

use crate::cmp::CmpError;
use crate::copula::CopulaError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cmp(#[from] CmpError),
    #[error(transparent)]
    Copula(#[from] CopulaError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero forward probability mass at time index {time} of match '{match_id}'")]
    ZeroMass { match_id: String, time: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{0}")]
    Data(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Cmp(CmpError::NonConvergence { .. })
                | Error::Copula(CopulaError::NegativeMass { .. })
                | Error::ZeroMass { .. }
                | Error::Numerical(_)
                | Error::Fit(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
