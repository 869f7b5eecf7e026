use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record in an input document violates a type invariant.
    #[error("invalid {kind} `{id}`: {reason}")]
    Validation {
        kind: &'static str,
        id: String,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no scaling factor for QRL pair ({0}, {1})")]
    MissingPair(String, String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("trip `{0}` has no feasible path within the transfer limit")]
    Infeasible(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    /// The master branch-and-bound hit its node budget. The Benders state at
    /// the time of the signal can be checkpointed and resumed.
    #[error("solver limit exceeded: {0}")]
    LimitExceeded(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn validation(kind: &'static str, id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            kind,
            id: id.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
