use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{algorithm} requires a {expected}-byte key, got {actual}")]
    KeyLength {
        algorithm: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{algorithm} input of {len} bytes is not a positive multiple of the {block}-byte block")]
    BlockAlignment {
        algorithm: &'static str,
        len: usize,
        block: usize,
    },

    #[error("ciphertext of {len} bytes is shorter than the {needed}-byte minimum")]
    Truncated { len: usize, needed: usize },

    #[error("invalid cascade: {0}")]
    InvalidCascade(String),

    #[error("message of {len} bytes exceeds the {max}-byte limit")]
    MessageTooLong { len: usize, max: usize },

    #[error("message integer is not smaller than the modulus")]
    MessageOutOfRange,

    #[error("OAEP decoding failed")]
    Decoding,

    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("KEM corpus exhausted after {available} samples")]
    CorpusExhausted { available: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("insufficient samples: requested {requested} per class, {available} available")]
    InsufficientSamples { requested: usize, available: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

/// Attaches a pipeline stage label to an error.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}
