use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-positive time interval {dt} at segment {index}")]
    NonPositiveInterval { index: usize, dt: f64 },

    #[error("degenerate path: {0}")]
    DegeneratePath(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular normal system at pivot {pivot} (value {value:e}, diag max {diag_max:e})")]
    SingularSystem {
        pivot: usize,
        value: f64,
        diag_max: f64,
    },

    #[error("non-finite cost encountered at iteration {iteration}")]
    NonFiniteCost { iteration: usize },

    #[error("start or goal blocked: {0}")]
    Blocked(String),

    #[error("grid format: {0}")]
    GridFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
