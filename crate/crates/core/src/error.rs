use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("numerical failure: every cluster has zero probability for observation {observation}")]
    NoFeasibleCluster { observation: usize },

    #[error("degenerate particle cloud for cluster {cluster}: all importance weights are zero")]
    DegenerateCloud { cluster: usize },

    #[error("empty chain: at least one stored snapshot is required")]
    EmptyChain,

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Ingest { path: PathBuf, message: String },

    #[error("chain file: {0}")]
    ChainFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
