use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("token index {index} out of range for vocabulary of size {size}")]
    OutOfVocabulary { index: usize, size: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}:{line}: token `{token}` is not in the vocabulary", path.display())]
    UnknownToken {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("no sequences in {}", .0.display())]
    NoSequences(PathBuf),

    #[error("non-finite statistics at step {step} (sequence {sequence} of the minibatch)")]
    NonFinite { step: u64, sequence: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("vocabulary mismatch: model has {model} entries, supplied vocabulary has {supplied}")]
    VocabMismatch { model: usize, supplied: usize },

    #[error("model file: bad magic bytes")]
    BadMagic,

    #[error("model file: format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("model file: truncated")]
    Truncated,

    #[error("model file: checksum mismatch")]
    Checksum,

    #[error("model file: {0}")]
    Malformed(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Checksum => 3,
            Error::Version { .. } => 4,
            Error::Truncated => 5,
            Error::BadMagic | Error::Malformed(_) => 6,
            Error::NonFinite { .. } => 7,
            Error::Io { .. } => 8,
            Error::VocabMismatch { .. } | Error::UnknownToken { .. } | Error::NoSequences(_) => 9,
            _ => 1,
        }
    }
}
