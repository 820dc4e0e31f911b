use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("field of size {n1}x{n2} is too small for an order-{order} stencil (need at least {needed} samples per axis)")]
    DimensionTooSmall {
        n1: usize,
        n2: usize,
        order: usize,
        needed: usize,
    },

    #[error("invalid derivative order {0} (expected 1 or 2)")]
    InvalidOrder(usize),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("explicit step produced a non-finite state at step {step} (t = {time:e})")]
    Stability { step: usize, time: f64 },

    #[error("time limit reached after {steps} steps without meeting the stopping rule")]
    StepLimit { steps: usize },

    #[error("{solver} did not converge in {iterations} iterations (final relative residual {residual:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate sinogram: {0}")]
    DegenerateSinogram(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported image format `{magic}` in {path} (only binary P5 graymaps are read)")]
    UnsupportedFormat { path: PathBuf, magic: String },

    #[error("config error at line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("experiment stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an I/O error with the file it concerns.
    pub fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
