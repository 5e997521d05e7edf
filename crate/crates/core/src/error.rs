use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} is not valid UTF-8 text")]
    Encoding { path: PathBuf },

    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("no documents")]
    NoDocuments,

    #[error("undefined variance: {0}")]
    UndefinedVariance(&'static str),

    #[error("degenerate table: {0}")]
    DegenerateTable(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("`{0}` not found")]
    NotFound(String),

    #[error("artifact `{name}` is corrupt: manifest hash {expected}, file hash {actual}")]
    Corrupt {
        name: String,
        expected: String,
        actual: String,
    },

    #[error("artifact `{0}` is stale")]
    Stale(String),

    #[error("stage `{stage}` needs fresh upstream output; rerun: {}", rerun.join(", "))]
    Dependency { stage: String, rerun: Vec<String> },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("project is locked by another process ({0})")]
    Locked(PathBuf),

    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },
}

impl Error {
    pub fn parse(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Parse {
            what,
            detail: detail.into(),
        }
    }

    /// Stable machine-readable code used by the HTTP service and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Ingest { .. } | Error::Encoding { .. } => "ingest",
            Error::DuplicateId(_) | Error::Conflict(_) | Error::Locked(_) => "conflict",
            Error::Config(_) => "config",
            Error::Validation(_) | Error::Parse { .. } => "validation",
            Error::NoDocuments | Error::Empty(_) => "empty",
            Error::UndefinedVariance(_) | Error::DegenerateTable(_) => "undefined",
            Error::NotFound(_) => "not_found",
            Error::Corrupt { .. } => "corrupt",
            Error::Stale(_) => "stale",
            Error::Dependency { .. } => "dependency",
            Error::Storage(_) | Error::Csv(_) | Error::Json(_) => "storage",
        }
    }
}
