use std::path::PathBuf;

use crate::trainer::EpochStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("metadata: missing required column \"{0}\"")]
    MissingColumn(String),

    #[error("metadata: row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("checkpoint: bad magic bytes {found:?} (expected \"AGSC\")")]
    BadMagic { found: Vec<u8> },

    #[error("checkpoint: unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("checkpoint: truncated file ({section})")]
    Truncated { section: &'static str },

    #[error("checkpoint: malformed header: {0}")]
    BadHeader(String),

    #[error("checkpoint: stored precision is {stored}-bit, requested {requested}-bit")]
    PrecisionMismatch { stored: u32, requested: u32 },

    #[error("training diverged at epoch {epoch} (non-finite train loss)")]
    Diverged { epoch: usize, history: Vec<EpochStats> },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
