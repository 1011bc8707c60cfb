//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]; geometry and loss kernels use
//! the structured variants so callers (trainer, CLI) can map failures onto
//! exit codes without string matching.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Two points carry different curvature contexts.
    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },

    /// A parameter is outside its documented domain (non-positive curvature,
    /// zero branching factor, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input carried a NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A geometric configuration on which the requested quantity is undefined
    /// (angle at the origin, coincident endpoints, zero spatial norm).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// A metric was requested on inputs for which it is undefined
    /// (single-class AUC, AP without positives, empty query set).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// An id referenced by a label file or pair list does not resolve.
    #[error("unknown id: {0}")]
    UnknownId(String),

    /// A persisted file failed structural validation.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A persisted file declares a format version this build does not read.
    #[error("unsupported format version {found} in {path} (expected {expected})")]
    UnsupportedVersion {
        path: String,
        found: String,
        expected: String,
    },

    /// The training loss left the finite range; the indices identify the
    /// entailment pairs (specific, general) whose terms were non-finite.
    #[error("non-finite loss at step {step}; offending pair indices: {pairs:?}")]
    NonFiniteLoss {
        step: u64,
        pairs: Vec<(usize, usize)>,
    },

    /// I/O failure, annotated with the path that caused it.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O error with the offending path.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Builds a parse error for `path` at 1-based `line`.
    pub fn parse(
        path: impl AsRef<std::path::Path>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }
}
