use std::path::PathBuf;

use thiserror::Error;

use crate::models::Checkpoint;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("{0}: empty sequence")]
    EmptySequence(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: malformed record: {msg}", path.display())]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("{}: bad PGM: {msg}", path.display())]
    Pgm { path: PathBuf, msg: String },

    #[error("bad program descriptor `{text}`: {msg}")]
    Descriptor { text: String, msg: String },

    #[error("distractor {slot} kept colliding with another candidate after {retries} retries")]
    DistractorCollision { slot: &'static str, retries: usize },

    #[error("not a checkpoint")]
    NotACheckpoint,

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("non-finite {what} loss at step {step}")]
    NonFinite {
        what: &'static str,
        step: u64,
        /// Model state after the last finite step.
        last_good: Box<Checkpoint>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
