//! Crate-wide error type with a coarse kind used for process exit codes.

use thiserror::Error;

/// Coarse classification: contract/config violations exit with 1, I/O with 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Contract,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or axis violation in a tensor op; message names the offending shapes.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Numeric domain violation (log/sqrt of a negative, t outside [0,1], ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A stated precondition or invariant of an operation was violated.
    #[error("contract error: {0}")]
    Contract(String),

    /// Word not present in the vocabulary.
    #[error("vocabulary error: unknown word '{0}'")]
    Vocab(String),

    /// Bad configuration: unknown key, parse failure, out-of-range value.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset problems (empty modality with positive probability, missing files).
    #[error("data error: {0}")]
    Data(String),

    /// Task not feasible for the given scene.
    #[error("feasibility error: {0}")]
    Feasibility(String),

    /// A synthesis pipeline stage rejected its input.
    #[error("pipeline error: stage {stage} sample {sample}: {reason}")]
    Pipeline {
        stage: String,
        sample: String,
        reason: String,
    },

    /// Checkpoint load failure; names the field where parsing stopped.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training aborted on a non-finite loss.
    #[error("training aborted: non-finite loss at step {step} (lr {lr}, grad norm {grad_norm})")]
    NanLoss { step: u64, lr: f64, grad_norm: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Contract,
        }
    }

    /// CLI exit code: 1 for contract/config errors, 2 for I/O errors.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Contract => 1,
            ErrorKind::Io => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
