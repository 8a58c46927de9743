use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {name}: expected {expected}, found {found}")]
    Dimension {
        name: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input sequence too short: need {needed} steps (warmup + T), got {got}")]
    SequenceTooShort { needed: usize, got: usize },

    #[error("degenerate expansion: R[{index},{index}] = 0 at step {step}")]
    DegenerateExpansion { index: usize, step: usize },

    #[error("explicit Jacobian product is not finite after {steps} factors")]
    ProductOverflow { steps: usize },

    #[error("sequence {index}: {source}")]
    Sequence {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{path}: unsupported format_version `{found}` (supported major: {supported})")]
    Version {
        path: PathBuf,
        found: String,
        supported: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(name: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            name: name.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
