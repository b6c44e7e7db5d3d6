//! Crate-wide error type.

use std::path::PathBuf;

use crate::corpus::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: invalid record: {}", format_violations(.violations))]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        violations: Vec<Violation>,
    },

    #[error("unknown domain `{0}` (expected one of: news, politics, science, music, literature, ai)")]
    UnknownDomain(String),

    #[error("unknown fine-grained entity type `{0}` (corpus/mapping version mismatch?)")]
    UnknownFineType(String),

    #[error("unknown relation label `{0}`")]
    UnknownLabel(String),

    #[error("missing training data for domain `{0}`")]
    MissingDomain(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("data file not found: {0}")]
    MissingFile(PathBuf),

    #[error("instance `{instance_id}` skipped: truncation to {max_len} subwords would drop an entity marker")]
    MarkerTruncated { instance_id: String, max_len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("output `{0}` already exists (pass --force to overwrite)")]
    OutputExists(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by missing or malformed input data, as opposed
    /// to runtime failures. The CLI maps these to distinct exit codes.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidRecord { .. }
                | Error::UnknownDomain(_)
                | Error::UnknownFineType(_)
                | Error::UnknownLabel(_)
                | Error::MissingDomain(_)
                | Error::EmptyCorpus(_)
                | Error::MissingFile(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("{} ({})", v.reason, v.field))
        .collect::<Vec<_>>()
        .join("; ")
}
