use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("negative depth {value} at index {index}")]
    NegativeDepth { index: usize, value: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no valid ground-truth pixel")]
    EmptyMask,

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("scene: {0}")]
    Scene(String),
}

impl Error {
    /// Short stable category used by command-line error prefixes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedHeader { .. } | Error::Truncated { .. } => "format",
            Error::NonFinite { .. } | Error::NegativeDepth { .. } => "value",
            Error::Io { .. } => "io",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::EmptyMask => "empty-mask",
            Error::BackwardBeforeForward => "state",
            Error::Checkpoint(_) => "checkpoint",
            Error::Scene(_) => "scene",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
