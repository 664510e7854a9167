use std::path::PathBuf;

/// Errors produced anywhere in the library.
///
/// Variants are split along the line the CLI cares about: bad inputs
/// (data, configuration, parameter domains) versus failures that happen
/// while doing work on valid inputs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("non-finite rate at entry ({i}, {k})")]
    NonFiniteRate { i: usize, k: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sampler failure in chain {chain}: {message}")]
    Sampler { chain: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error stems from user-supplied input rather than a
    /// failure while processing valid input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::Dimension(_)
                | Error::Domain(_)
                | Error::Unsupported(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
