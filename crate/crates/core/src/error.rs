use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav decode error: {0}")]
    Wav(#[from] hound::Error),

    /// Audio property outside the supported set (encoding, channel count, sample rate).
    #[error("unsupported {property}: {value}")]
    UnsupportedAudio { property: &'static str, value: String },

    #[error("{what}: need at least {needed}, got {got}")]
    TooShort {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: bad magic, expected `{expected}`")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: malformed file: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("class {class} has {count} frames, need at least {needed}")]
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },

    #[error("within-class scatter is singular; reduce dimension with PCA before LDA/HLDA")]
    SingularScatter,

    #[error("accent `{0}` has no frames")]
    EmptyAccent(String),

    #[error("unknown accent label `{0}`")]
    UnknownAccent(String),

    #[error("no vowel evidence")]
    NoVowelEvidence,

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite {artifact}: run stage `{stage}` first")]
    MissingPrerequisite { stage: &'static str, artifact: PathBuf },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
