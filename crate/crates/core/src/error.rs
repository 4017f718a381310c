use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = IlcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IlcError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// The plant recursion produced NaN or an infinity. `iteration` is filled
    /// in by the engine once the offending trial is known.
    #[error("non-finite plant output at t = {t}{}", .iteration.map(|k| format!(", iteration k = {k}")).unwrap_or_default())]
    NonFiniteOutput { iteration: Option<usize>, t: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParams { name: &'static str, reason: String },

    #[error("unknown plant `{0}`")]
    UnknownPlant(String),

    #[error("{what} index {index} out of range 0..={max}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl IlcError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        IlcError::InvalidParams {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        IlcError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IlcError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(IlcError::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
