use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents are incompatible with the operation.
    #[error("{op}: dimension error: {msg}")]
    Dimension { op: &'static str, msg: String },

    /// An element lies outside the operation's domain (log of a non-positive
    /// value, division by zero, non-finite softmax input).
    #[error("{op}: numeric domain error at flat index {index} (value {value})")]
    NumericDomain { op: &'static str, index: usize, value: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {msg}")]
    Decode { path: PathBuf, msg: String },

    #[error("{path}: unsupported bit depth {depth}")]
    UnsupportedBitDepth { path: PathBuf, depth: u32 },

    #[error("dataset error: {}", .problems.join("; "))]
    Dataset { problems: Vec<String> },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
}

impl Error {
    pub(crate) fn dim(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Dimension { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic tag {0:?}, not a checkpoint")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}
