use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. The variant name doubles as the
/// machine-readable error name surfaced by the CLI (see [`Error::name`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("duplicate tensor name `{0}`")]
    DuplicateTensor(String),

    #[error("tensor `{name}`: {detail}")]
    ShapeError { name: String, detail: String },

    #[error("rule `{rule}` maps `{base}` to `{target}`, which is absent from the donor")]
    MappingTargetMissing {
        rule: String,
        base: String,
        target: String,
    },

    #[error("shape mismatch for `{name}`: {left:?} vs {right:?}")]
    ShapeMismatch {
        name: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid mapping rule `{rule}`: {detail}")]
    InvalidRule { rule: String, detail: String },

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("all task vectors are identically zero")]
    DegenerateTaskVectors,

    #[error("candidate grid needs at least 3 points, got {0}")]
    GridTooSmall(usize),

    #[error("invalid candidate grid: {0}")]
    InvalidGrid(String),

    #[error("input list is empty")]
    NoInputs,

    #[error("response sets are misaligned: {0}")]
    MisalignedResponses(String),

    #[error("embedding backend failed: {0}")]
    EmbeddingBackendError(String),

    #[error("backend produced different responses for identical invocations ({0})")]
    NondeterministicBackend(String),

    #[error("backend process exited with {code:?}: {diagnostics}")]
    BackendProcessFailed {
        code: Option<i32>,
        diagnostics: String,
    },

    #[error("backend protocol violation: {0}")]
    BackendProtocolError(String),

    #[error("candidate alpha={alpha} failed: {source}")]
    CandidateFailed {
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Backend,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable name of the error kind.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Format(_) => "FormatError",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::DuplicateTensor(_) => "DuplicateTensor",
            Error::ShapeError { .. } => "ShapeError",
            Error::MappingTargetMissing { .. } => "MappingTargetMissing",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::InvalidRule { .. } => "InvalidRule",
            Error::InvalidRecipe(_) => "InvalidRecipe",
            Error::DegenerateTaskVectors => "DegenerateTaskVectors",
            Error::GridTooSmall(_) => "GridTooSmall",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::NoInputs => "NoInputs",
            Error::MisalignedResponses(_) => "MisalignedResponses",
            Error::EmbeddingBackendError(_) => "EmbeddingBackendError",
            Error::NondeterministicBackend(_) => "NondeterministicBackend",
            Error::BackendProcessFailed { .. } => "BackendProcessFailed",
            Error::BackendProtocolError(_) => "BackendProtocolError",
            Error::CandidateFailed { source, .. } => source.name(),
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidRule { .. }
            | Error::InvalidRecipe(_)
            | Error::GridTooSmall(_)
            | Error::InvalidGrid(_)
            | Error::Config(_) => ErrorClass::Config,
            Error::EmbeddingBackendError(_)
            | Error::NondeterministicBackend(_)
            | Error::BackendProcessFailed { .. }
            | Error::BackendProtocolError(_) => ErrorClass::Backend,
            Error::CandidateFailed { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// The tensor, rule or candidate the error is about, when there is one.
    pub fn subject(&self) -> Option<String> {
        match self {
            Error::DuplicateTensor(name) => Some(name.clone()),
            Error::ShapeError { name, .. } | Error::ShapeMismatch { name, .. } => {
                Some(name.clone())
            }
            Error::MappingTargetMissing { base, .. } => Some(base.clone()),
            Error::InvalidRule { rule, .. } => Some(rule.clone()),
            Error::CandidateFailed { alpha, .. } => Some(format!("alpha={alpha}")),
            Error::Io { path, .. } => Some(path.display().to_string()),
            _ => None,
        }
    }
}
