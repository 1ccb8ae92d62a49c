use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report. Variants map onto the CLI exit
/// codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed archive at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("checksum mismatch for archive entry `{path}`")]
    Integrity { path: String },
    #[error("unsupported archive feature: {0}")]
    Unsupported(String),
    #[error("archive invariant violated: {0}")]
    Invariant(String),
    #[error("injection into `{0}` is forbidden: feature extractors read this location")]
    ForbiddenLocation(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("app `{0}` cannot be repackaged")]
    Repack(String),
    #[error("scan failed for `{id}`: {reason}")]
    Scan { id: String, reason: String },
    #[error("extraction failed in {file} line {line}: {reason}")]
    Extraction { file: &'static str, line: usize, reason: String },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("training failed: {0}")]
    Train(String),
    #[error("training diverged (NaN loss) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("operation requires a `{expected}` model, got `{got}`")]
    Kind { expected: &'static str, got: &'static str },
    #[error("attack failed: {0}")]
    Attack(String),
    #[error("defense failed: {0}")]
    Defense(String),
    #[error("split failed: {0}")]
    Split(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("repeat {repeat}: {source}")]
    Repeat {
        repeat: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(offset: usize, reason: impl Into<String>) -> Self {
        Error::Parse { offset, reason: reason.into() }
    }

    pub(crate) fn extraction(file: &'static str, line: usize, reason: impl Into<String>) -> Self {
        Error::Extraction { file, line, reason: reason.into() }
    }

    pub(crate) fn in_repeat(self, repeat: usize) -> Self {
        Error::Repeat { repeat, source: Box::new(self) }
    }

    /// Process exit code for the CLI: everything that reaches here is a
    /// data or configuration problem.
    pub fn exit_code(&self) -> i32 {
        2
    }
}
