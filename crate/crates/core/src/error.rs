use thiserror::Error;

use crate::markov::Ergodicity;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed, or out of range.
    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// An argument lies outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no data: {0}")]
    NoData(String),

    /// Input data (trace, matrix) does not match the expected schema or topology.
    #[error("data error: {0}")]
    Data(String),

    #[error("chain is not ergodic: {0}")]
    NonErgodic(Ergodicity),

    #[error("singular balance system: {0}")]
    Singular(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidConfig { .. })
    }

    /// True for errors caused by malformed or insufficient input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::NoData(_) | Error::Data(_) | Error::Csv(_) | Error::NonErgodic(_)
        )
    }
}
