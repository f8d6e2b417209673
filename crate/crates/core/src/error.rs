use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite (failed at jitter {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("reversed interval: start {start} is after end {end}")]
    ReversedInterval { start: f64, end: f64 },

    #[error("time {time} lies outside the frame grid [{start}, {end}]")]
    OutOfGrid { time: f64, start: f64, end: f64 },

    #[error("frozen covariance is degenerate on ({t}, {s})")]
    DegenerateCovariance { t: f64, s: f64 },

    #[error("unsupported derivative order (x1: {n_x1}, x2: {n_x2}, y1: {n_y1})")]
    UnsupportedOrder { n_x1: u8, n_x2: u8, n_y1: u8 },

    #[error("the Kolmogorov oracle requires a non-zero alpha")]
    ZeroAlpha,

    #[error("ensemble needs at least two samples, got {0}")]
    EmptyEnsemble(usize),

    #[error("derivative field {0} is not available")]
    MissingDerivativeField(&'static str),

    #[error("centering variant {variant} is not admissible for this derivative order")]
    InadmissibleVariant { variant: char },

    #[error("quadrature budget exceeded: {needed} points requested, budget {budget}")]
    QuadratureBudgetExceeded { needed: usize, budget: usize },

    #[error("Picard iteration stopped contracting at iteration {iteration} (ratios {ratios:?})")]
    NoContraction { iteration: usize, ratios: Vec<f64> },

    #[error("gamma {gamma} must lie in (0, {upper})")]
    InvalidGamma { gamma: f64, upper: f64 },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("unsupported dimension {0}: only d = 1 grids are implemented")]
    UnsupportedDimension(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
