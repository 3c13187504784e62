use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A loss, gradient or iterate became non-finite or exceeded the divergence threshold.
    #[error("diverged{}: {context}", iteration.map(|n| format!(" at iteration {n}")).unwrap_or_default())]
    Divergence {
        iteration: Option<usize>,
        context: String,
    },

    /// A log-log order fit failed its quality gate.
    #[error("order fit rejected: {0}")]
    FitRejected(String),

    #[error("operation requires a least-squares model, got {0}")]
    NotLeastSquares(String),

    /// Malformed IDX content.
    #[error("IDX parse error in {path}: at byte offset {offset}, expected {expected}, found {found}")]
    Idx {
        path: PathBuf,
        offset: u64,
        expected: String,
        found: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn diverged(context: impl Into<String>) -> Self {
        Error::Divergence {
            iteration: None,
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches an iteration index to a divergence signal; other variants pass through.
    pub fn at_iteration(self, n: usize) -> Self {
        match self {
            Error::Divergence { context, .. } => Error::Divergence {
                iteration: Some(n),
                context,
            },
            other => other,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
