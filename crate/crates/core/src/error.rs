use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: field `correct` must be 0 or 1, got {value}")]
    NonBinaryCorrect { line: usize, value: String },

    #[error("line {line}: duplicate record for prompt `{prompt_id}` generation {generation_index}")]
    DuplicateGeneration {
        line: usize,
        prompt_id: String,
        generation_index: u32,
    },

    #[error("no records left after filtering")]
    EmptySelection,

    #[error("records span {0} distinct (benchmark, model, mode) groups; narrow the selection with filters")]
    MixedSelection(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("ragged matrix: prompts with a different generation count: {}", .0.join(", "))]
    Ragged(Vec<String>),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("prompt sets differ: {0}")]
    PromptMismatch(String),

    #[error("missing answer_key for prompt `{prompt_id}` generation {generation_index}")]
    MissingAnswerKey {
        prompt_id: String,
        generation_index: u32,
    },

    #[error("cluster labels: {0}")]
    Labels(String),

    #[error("equivalence oracle: {0}")]
    Oracle(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
