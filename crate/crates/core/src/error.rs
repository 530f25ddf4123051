use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A caller broke an API contract (for example differentiating a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error at line {line} (record {id:?}): {message}")]
    Validation {
        line: usize,
        id: String,
        message: String,
    },

    #[error("unknown prompt {0:?}: no target answer in corpus")]
    UnknownPrompt(String),

    /// Odds-ratio transform hit p = 1 (zero mean log-probability).
    #[error("singular odds: mean log-probability {0} gives p = 1")]
    SingularOdds(f64),

    /// The reference policy gives zero mass to an action, so `log pi_ref` is -inf.
    #[error("support mismatch: reference policy has zero probability at t={t}, s={state}, a={action}")]
    SupportMismatch {
        t: usize,
        state: usize,
        action: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
