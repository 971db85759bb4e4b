use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite iterate at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed dataset file: {reason}")]
    DatasetFormat { path: PathBuf, reason: String },

    #[error(transparent)]
    Weights(#[from] WeightError),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading or validating a denoiser weight file.
#[derive(Debug, Error)]
pub enum WeightError {
    #[error("bad magic {found:?}, expected \"PRDW\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),

    #[error("weight file truncated while reading {0}")]
    Truncated(String),

    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),

    #[error("duplicate tensor {0}")]
    DuplicateTensor(String),

    #[error("weight file is for N={file} antennas but the geometry has N={expected}")]
    AntennaCount { file: usize, expected: usize },

    #[error("N={0} is not a perfect square")]
    NonSquare(usize),

    #[error("invalid tensor name encoding")]
    BadName,

    #[error("invalid normalization constants: {0}")]
    BadNormalization(String),

    #[error("{0} trailing bytes after metadata block")]
    TrailingBytes(usize),
}
