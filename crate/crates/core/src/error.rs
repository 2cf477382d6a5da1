use std::path::PathBuf;

/// Errors produced anywhere in the imaging pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid too coarse: smallest defect feature is {feature:.4e} m, spacing {spacing:.4e} m gives {pixels:.2} pixels (need >= {required})")]
    Resolution {
        feature: f64,
        spacing: f64,
        pixels: f64,
        required: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("solver became unstable at step {step}")]
    Instability { step: usize },

    #[error("single-class ground truth: {positives} positive and {negatives} negative pixels")]
    SingleClass { positives: usize, negatives: usize },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Instability { .. })
    }
}
