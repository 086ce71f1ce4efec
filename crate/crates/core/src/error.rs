use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Invalid configuration. `field` is a dotted path into the config document.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("no usable rows in interaction log")]
    NoUsableRows,

    #[error("too many rejected rows: {rejected} of {total}")]
    TooManyRejected { rejected: usize, total: usize },

    #[error("every user has fewer than 4 behaviors; nothing to split")]
    AllUsersDropped,

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("AUC undefined: need at least one positive and one negative label")]
    AucUndefined,

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in {path}")]
    NonFinite { path: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: u64, loss: f64 },

    #[error("{what} not found: {path}")]
    MissingArtifact { what: &'static str, path: PathBuf },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}

impl Error {
    /// Process exit status for this error: 2 for configuration problems,
    /// 3 for missing input artifacts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::MissingArtifact { .. } => 3,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Config { .. } => "invalid_config",
            Error::NoUsableRows | Error::TooManyRejected { .. } | Error::AllUsersDropped => "data",
            Error::Dimension { .. } => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Graph(_) => "graph",
            Error::AucUndefined => "auc_undefined",
            Error::EmptyBatch => "empty_batch",
            Error::NonFinite { .. } => "non_finite",
            Error::Diverged { .. } => "diverged",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::Format { .. } => "format",
        }
    }

    /// Machine-readable form: `{"error": kind, "message": ..., "field"?: ...}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            Error::Config { field, message } => {
                v["field"] = field.clone().into();
                v["detail"] = message.clone().into();
            }
            Error::MissingArtifact { path, .. } => v["path"] = path.display().to_string().into(),
            Error::NonFinite { path } => v["parameter"] = path.clone().into(),
            _ => {}
        }
        v
    }
}
