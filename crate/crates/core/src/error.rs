use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: u64, message: String },

    #[error("encode error: {0}")]
    Encode(String),

    #[error("pfm: {0}")]
    Pfm(String),

    #[error("obj line {line}: {message}")]
    Obj { line: usize, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("degenerate source: point set has zero variance")]
    DegenerateSource,

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("empty target set")]
    EmptyTarget,

    #[error("no initial overlap: {correspondences} correspondences within radius")]
    NoInitialOverlap { correspondences: usize },

    #[error("empty union")]
    EmptyUnion,

    #[error("degenerate background: no triangle could be emitted")]
    DegenerateBackground,

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("unfittable: mask has {valid} valid disparity pixels, need {needed}")]
    Unfittable { valid: usize, needed: usize },

    #[error("fit failure: {reason}")]
    FitFailure {
        reason: String,
        diagnostics: Box<crate::fitting::FitDiagnostics>,
    },

    #[error("empty object mask")]
    EmptyMask,

    #[error("no overlap between depth renderings")]
    NoOverlap,

    #[error("depth refinement diverged at step {step}: smoothed loss {smoothed} > 10x initial {initial}")]
    Diverged {
        step: usize,
        smoothed: f64,
        initial: f64,
    },

    #[error("placement failed after {retries} retries for object {object}")]
    Placement { object: usize, retries: usize },

    #[error("{role} backend failed at iteration {iteration}: {message}")]
    Backend {
        role: &'static str,
        iteration: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(role: &'static str, message: impl Into<String>) -> Self {
        Error::Backend {
            role,
            iteration: 0,
            message: message.into(),
        }
    }

    /// Re-tag a backend error with the removal iteration it happened in.
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::Backend { role, message, .. } => Error::Backend {
                role,
                iteration,
                message,
            },
            other => other,
        }
    }
}
