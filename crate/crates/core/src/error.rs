use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line} (byte offset {offset}): {message}")]
    Parse {
        line: usize,
        offset: u64,
        message: String,
    },

    #[error("line {line}: missing field {field}")]
    MissingField { line: usize, field: &'static str },

    #[error("duplicate id {id} at line {line} (first seen at line {first_line})")]
    DuplicateId {
        id: u64,
        first_line: usize,
        line: usize,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("empty document")]
    EmptyDocument,

    #[error("degenerate embedding")]
    DegenerateEmbedding,

    #[error("stage {stage} failed on document {doc_id}: {message}")]
    Stage {
        stage: &'static str,
        doc_id: u64,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("remote service error: {0}")]
    Remote(String),

    /// A pipeline stage failed after validation passed.
    #[error("stage {stage} failed: {source}")]
    Pipeline {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn stage(stage: &'static str, doc_id: u64, err: impl std::fmt::Display) -> Self {
        Error::Stage {
            stage,
            doc_id,
            message: err.to_string(),
        }
    }

    /// True for errors caused by bad user input (configuration, parameters)
    /// rather than by a stage failing mid-run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Param(_))
    }
}
