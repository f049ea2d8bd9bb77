use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown store id {0}")]
    UnknownStore(u64),

    #[error("duplicate store id {0}")]
    DuplicateStore(u64),

    #[error("store {0} is closed in this state")]
    StoreClosed(u64),

    #[error("invalid store record {id}: {reason}")]
    InvalidStore { id: u64, reason: String },

    #[error("invalid closure state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("search error: {0}")]
    Search(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("no stores found for county `{0}`")]
    EmptyCounty(String),

    #[error("{0}")]
    Oracle(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
