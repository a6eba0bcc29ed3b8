use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("invalid stream spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shard has no tokens to train on")]
    EmptyShard,

    #[error("invalid number of clusters: k={k} with {n} points")]
    InvalidK { k: usize, n: usize },

    #[error("residual quantization failed: {0}")]
    Quantization(String),

    #[error("bucket index {index} does not fit in {bits} bits")]
    IndexOverflow { index: u32, bits: u8 },

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("embedder fingerprint mismatch: {0}")]
    Incompatible(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("out-of-order document: ordinal {got} after {last}")]
    Ordering { got: u64, last: u64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Format(e.to_string())
    }
}
