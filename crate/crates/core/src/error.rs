use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("inconsistent partition: {0}")]
    InconsistentPartition(String),

    #[error("exact EPPF unavailable at this size: {total} data points exceeds the enumeration budget of {budget}")]
    EnumerationBudget { total: usize, budget: usize },

    #[error("stale counts: token ({doc}, {token}) has not been removed from the count tables")]
    StaleCounts { doc: usize, token: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("every term was removed by the vocabulary filter (min_docs = {0})")]
    AllTermsFiltered(usize),

    #[error("test set carries no word mass")]
    ZeroTestMass,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
