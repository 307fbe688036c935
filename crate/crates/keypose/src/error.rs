//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: inconsistent column count (expected {expected}, got {got})")]
    InconsistentColumns {
        path: PathBuf,
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("empty file: {path}")]
    EmptyFile { path: PathBuf },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("sequence too short: {len} frames (need at least {min})")]
    SequenceTooShort { len: usize, min: usize },

    #[error("sequence too long for exhaustive oracle: {len} frames (max {max})")]
    SequenceTooLong { len: usize, max: usize },

    #[error("joint count mismatch: expected {expected}, got {got}")]
    JointMismatch { expected: usize, got: usize },

    #[error("need at least {need} points for k={k}, got {got}")]
    TooFewPoints { need: usize, k: usize, got: usize },

    #[error("label {label} out of range for {k} clusters")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("cluster count mismatch: network expects {net_k}, model has {model_k}")]
    ClusterCountMismatch { net_k: usize, model_k: usize },

    #[error("not enough observed keyposes: have {have}, need {need}")]
    InsufficientKeyposes { have: usize, need: usize },

    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    #[error("missing split listing: {0}")]
    MissingSplit(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}
