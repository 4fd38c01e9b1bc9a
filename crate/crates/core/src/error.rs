use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure categories, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Gateway,
    Data,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Gateway => 3,
            ErrorClass::Data => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at record {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("document {0:?} has no tokens")]
    EmptyDocument(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("gateway error ({backend}): {message}")]
    Gateway {
        backend: String,
        status: Option<u16>,
        message: String,
    },

    #[error("truncated response from {0}")]
    TruncatedResponse(String),

    #[error("backend contract violation: {0}")]
    Contract(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("unparseable model response: {0}")]
    Unparseable(String),

    #[error("keyphrase extraction failed on {failed} of {total} chunks")]
    ExtractionAborted { failed: usize, total: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("invalid state: {0}")]
    State(String),

    #[error("label name {0:?} collides with an existing label")]
    Collision(String),

    #[error("gamma undefined: {0}")]
    GammaUndefined(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("entailment scoring stopped after {completed_rows} rows: {source}")]
    PartialMatrix {
        completed_rows: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {0} (run the stage that produces it first)")]
    MissingArtifact(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Gateway { .. } | Error::TruncatedResponse(_) | Error::Contract(_) => {
                ErrorClass::Gateway
            }
            Error::PartialMatrix { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
