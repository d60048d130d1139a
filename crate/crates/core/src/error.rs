use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("exact Shapley supports at most {cap} players, got {players}; use Monte Carlo mode")]
    ShapleyCap { players: usize, cap: usize },

    #[error("nothing to aggregate: no client updates")]
    EmptyAggregation,

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("strategy {0} has no baseline bidding rule")]
    NotABaseline(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
