use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid norm spec `{norm}`: {reason}")]
    NormSpec { norm: String, reason: String },

    #[error("ingestion failed for norm `{norm}`: {reason}")]
    Ingest { norm: String, reason: String },

    #[error("valence pairing error: {0}")]
    Pairing(String),

    #[error("prompt template error: {0}")]
    Template(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Every observed cell has a single replicate, so the interaction and
    /// residual variances cannot be separated.
    #[error("confounded design: {0}")]
    Confounded(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("responder transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
