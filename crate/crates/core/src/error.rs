use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("joints {i} and {j} are disconnected")]
    Disconnected { i: usize, j: usize },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: frame {frame} has {found} joints, expected 33", path.display())]
    JointCount {
        path: PathBuf,
        frame: usize,
        found: usize,
    },

    #[error("{}:{line}: duplicate manifest id {id:?}", path.display())]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("file truncated at byte offset {offset}")]
    Truncated { offset: usize },

    #[error("checkpoint disagrees with config: {0}")]
    CheckpointMismatch(String),

    #[error("loss is not finite at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("unknown config key {key:?} at line {line}")]
    UnknownConfigKey { line: usize, key: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable machine-readable code printed by the CLI before the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "E_SHAPE",
            Error::InvalidArgument(_) => "E_INVALID",
            Error::Disconnected { .. } => "E_GRAPH",
            Error::Parse { .. } => "E_PARSE",
            Error::JointCount { .. } => "E_JOINTS",
            Error::DuplicateId { .. } => "E_DUPLICATE_ID",
            Error::BadMagic { .. } => "E_MAGIC",
            Error::UnsupportedVersion { .. } => "E_VERSION",
            Error::Truncated { .. } => "E_TRUNCATED",
            Error::CheckpointMismatch(_) => "E_CHECKPOINT",
            Error::NonFiniteLoss { .. } => "E_NAN_LOSS",
            Error::UnknownConfigKey { .. } => "E_CONFIG",
            Error::Io { .. } => "E_IO",
        }
    }
}
