use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("timestep index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("{what} = {value} is not divisible by {divisor}")]
    NotDivisible {
        what: &'static str,
        value: usize,
        divisor: usize,
    },

    #[error("invalid latent factor: tile size {tile} is not a multiple of factor {factor}")]
    InvalidFactor { tile: usize, factor: usize },

    #[error("rect at ({row0}, {col0}) of size {height}x{width} exceeds canvas {canvas_h}x{canvas_w}")]
    OutOfBounds {
        row0: usize,
        col0: usize,
        height: usize,
        width: usize,
        canvas_h: usize,
        canvas_w: usize,
    },

    #[error("expected {expected} tiles, got {actual}")]
    CountMismatch { expected: usize, actual: usize },

    #[error("unknown conditioning: {0}")]
    UnknownConditioning(String),

    #[error("covariance of component {0} is not positive definite")]
    SingularCovariance(usize),

    #[error("backend `{0}` does not support this operation")]
    UnsupportedBackend(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    DivergedTraining { step: usize, loss: f64 },

    #[error("model unavailable: {0}")]
    ModelUnavailable(String),

    #[error("guidance scale {scale} out of range for mode {mode}")]
    ScaleOutOfRange { mode: &'static str, scale: f64 },

    #[error("mode {mode} cannot be run by {sampler}")]
    ModeMismatch { mode: &'static str, sampler: &'static str },

    #[error("inverted latent carries no epsilon cache")]
    MissingCache,

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// Stable kebab-case identifier used in machine-parsable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidRange(_) => "invalid-range",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::NotDivisible { .. } => "not-divisible",
            Error::InvalidFactor { .. } => "invalid-factor",
            Error::OutOfBounds { .. } => "out-of-bounds",
            Error::CountMismatch { .. } => "count-mismatch",
            Error::UnknownConditioning(_) => "unknown-conditioning",
            Error::SingularCovariance(_) => "singular-covariance",
            Error::UnsupportedBackend(_) => "unsupported-backend",
            Error::DivergedTraining { .. } => "diverged-training",
            Error::ModelUnavailable(_) => "model-unavailable",
            Error::ScaleOutOfRange { .. } => "scale-out-of-range",
            Error::ModeMismatch { .. } => "mode-mismatch",
            Error::MissingCache => "missing-cache",
            Error::Format(_) => "malformed-data",
            Error::Io(_) => "io-error",
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure during computation.
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::DivergedTraining { .. } | Error::Io(_) | Error::SingularCovariance(_)
        )
    }
}
