use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the benchmark.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("malformed rows in {}: {}", path.display(), format_rows(rows))]
    MalformedRows {
        path: PathBuf,
        rows: Vec<(usize, String)>,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

fn format_rows(rows: &[(usize, String)]) -> String {
    rows.iter()
        .map(|(row, why)| format!("row {row} ({why})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
