use thiserror::Error;

use crate::domain::Violation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("invalid volume for {field}: {value}")]
    InvalidVolume { field: &'static str, value: f64 },
    #[error("invalid BT-RADS category: {0}")]
    InvalidCategory(String),
    #[error("invalid value {value:?} for {field}")]
    InvalidEnum { field: &'static str, value: String },
    #[error("invalid case record: {0}")]
    InvalidRecord(String),
}

/// Errors from the statistics routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(String),
}

impl StatsError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        StatsError::Domain(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("schema violation after {attempts} attempt(s): {message}")]
    SchemaViolation { attempts: u32, message: String },
    #[error("evidence span verification failed: {}", join(.0))]
    SpanVerificationFailure(Vec<Violation>),
    #[error("empty note")]
    EmptyNote,
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no evaluable cases")]
    EmptyCohort,
    #[error("case not found: {0}")]
    NotFound(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

impl PipelineError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
