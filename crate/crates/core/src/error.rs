use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix set is empty")]
    EmptySet,

    #[error("matrix `{label}` has shape {rows}x{cols}, expected {dim}x{dim}")]
    Shape {
        label: String,
        rows: usize,
        cols: usize,
        dim: usize,
    },

    #[error("matrix `{label}` is numerically singular (|det| = {abs_det:e})")]
    Singular { label: String, abs_det: f64 },

    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),

    #[error("label count {labels} does not match matrix count {matrices}")]
    LabelCount { labels: usize, matrices: usize },

    #[error("word is empty")]
    EmptyWord,

    #[error("word index {index} out of range for a set of {len} matrices")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("index {k} out of range 1..={max}")]
    IndexRange { k: usize, max: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation requires dimension 2, got {0}")]
    NotPlanar(usize),

    #[error("support invariance violated: image angle {angle} escapes the multicone")]
    SupportEscaped { angle: f64 },

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("required rotation {needed} exceeds the available angle {available}")]
    AngleBudget { needed: f64, available: f64 },

    #[error("numerically degenerate subspaces: {0}")]
    Degenerate(String),

    #[error("no perturbation certificate: {reason}")]
    NoCertificate {
        reason: String,
        /// Smallest perturbation size that some candidate would have needed.
        min_epsilon: Option<f64>,
    },

    #[error("invalid gallery parameters: {0}")]
    Gallery(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
