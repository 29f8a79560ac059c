use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// Shape and masking errors are programming errors in the caller, but they are
/// reported rather than panicking so the CLI can surface them with context.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("row {row} of {op} has no unmasked entries")]
    AllMasked { op: &'static str, row: usize },

    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("token {token:?} is not in the {side} vocabulary")]
    UnknownToken { side: &'static str, token: String },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("sequence of length {len} exceeds maximum {max}")]
    TooLong { len: usize, max: usize },

    #[error("illegal eSCAN phrase: {0}")]
    IllegalPhrase(String),

    #[error("word {0:?} has no occurrences in the estimation set")]
    MissingWord(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
