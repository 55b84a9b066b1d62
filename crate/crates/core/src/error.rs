use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty candidate list")]
    EmptyCandidateList,

    #[error("invalid passage id: must be non-empty")]
    EmptyPassageId,

    #[error("invalid query id: must be non-empty")]
    EmptyQueryId,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("k = {k} out of range for {n} candidates")]
    KOutOfRange { k: usize, n: usize },

    #[error("exhausted: every candidate has already been extracted")]
    Exhausted,

    /// The backend failed after all retries; carries the request that failed.
    #[error("backend failure for query {qid} (slots {docids:?}): {message}")]
    Backend {
        qid: String,
        docids: Vec<String>,
        status: Option<u16>,
        message: String,
    },

    #[error("incomplete bias group {group}: {message}")]
    IncompleteGroup { group: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
