//! Error types shared across the crate.

use std::path::PathBuf;

/// Crate-wide error enum. Variants map onto the CLI exit-code contract:
/// config/input problems, I/O and file-format problems, training aborts,
/// checkpoint problems and gradient-check failures are distinguishable.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of tensor operands do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An API contract was violated (e.g. backward on a non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid runtime input (out-of-vocabulary token, unknown sample id, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A binary file failed structural validation.
    #[error("format error in {path}: {msg} (offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    /// A manifest line failed to parse or validate.
    #[error("manifest error at {path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A temporal transform erased the whole target segment; the caller
    /// should resample fresh parameters.
    #[error("degenerate augmentation: {0}")]
    DegenerateSample(String),

    /// Augmentation kept producing degenerate samples after all retries.
    #[error("augmentation failed after {attempts} attempts: {msg}")]
    Augmentation { attempts: u32, msg: String },

    /// Training produced a non-finite loss and must abort.
    #[error("training abort: {0}")]
    TrainingAbort(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// One or more analytic gradients disagree with finite differences.
    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
