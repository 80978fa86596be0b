use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: self-loop on `{name}` rejected")]
    SelfLoop { line: usize, name: String },

    #[error("input is cyclic: {}", cycle.join(" -> "))]
    Cyclic { cycle: Vec<String> },

    #[error("{what} index {index} out of range (< {bound})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{fold} fold: candidate pool exhausted after {achieved} of {target} instances")]
    PoolExhausted {
        fold: &'static str,
        achieved: usize,
        target: usize,
    },

    #[error("operation requires a `{expected}` model, got `{actual}`")]
    ModelKind {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("non-finite value in epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("hyperparameter tuning failed: every grid point diverged")]
    TuningFailed,

    #[error("dev set needs both positive and negative labels")]
    DegenerateDev,

    #[error("no positive instances; ranking metric undefined")]
    NoPositives,

    #[error("unknown node names: {}", .0.join(", "))]
    Vocabulary(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
