//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("event at t={t} arrives before the latest node (t={latest})")]
    OutOfOrder { t: i64, latest: i64 },

    #[error("stale event at t={t}: window start has advanced to {cutoff}")]
    Stale { t: i64, cutoff: i64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cache inconsistent with graph (cache revision {cache}, graph revision {graph}); full rebuild required")]
    CacheInvalid { cache: u64, graph: u64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
