use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("kernel exceeds input length: kernel {kernel} > length {length}")]
    KernelExceedsInput { kernel: usize, length: usize },

    #[error("invalid hyperparameter {name}: {reason}")]
    InvalidHyper { name: String, reason: String },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("csv parse error at line {line}, column `{column}`: {reason}")]
    CsvCell {
        line: usize,
        column: String,
        reason: String,
    },

    #[error("csv arity mismatch at line {line}: expected {expected} fields, got {got}")]
    CsvArity {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn hyper(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidHyper {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
