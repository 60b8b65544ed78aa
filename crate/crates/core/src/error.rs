use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: unknown token {token:?}")]
    UnknownToken {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("duplicate task id {0:?}")]
    DuplicateId(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("sequence of length {len} exceeds the context cap {cap}{}", pair.as_ref().map(|(z, x)| format!(" (demonstration {z}, task {x})")).unwrap_or_default())]
    ContextOverflow {
        len: usize,
        cap: usize,
        pair: Option<(String, String)>,
    },

    #[error("token index {token} is out of range for a vocabulary of {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("damped Hessian is not positive definite (lambda = {lambda:e}); smallest eigenvalue {min_eigenvalue:e}, use lambda > {suggested:e}")]
    NotPositiveDefinite {
        lambda: f64,
        min_eigenvalue: f64,
        suggested: f64,
    },

    #[error("solver did not converge in {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
