use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch at {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("activation cache does not match the network or parameters it is used with")]
    StaleCache,

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("probability vector does not sum to one (sum = {sum})")]
    NotADistribution { sum: f64 },

    #[error("inner descent diverged at step {step}: loss {loss} vs initial {initial}")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("KKT check failed: {0}")]
    Kkt(String),

    #[error("{}: bad magic number, expected {expected} ({expected:#010x}), got {actual} ({actual:#010x})", path.display())]
    Magic {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("{}: truncated file ({detail})", path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("sample count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}
