use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty target")]
    EmptyTarget,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension must be multiple of 6 (got {0})")]
    DimensionNotMultipleOfSix(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("too few correspondences: need at least {needed}, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },

    #[error("degenerate configuration")]
    DegenerateConfiguration,

    #[error("underdetermined system")]
    Underdetermined,

    #[error("registration failed")]
    RegistrationFailed,

    #[error("infeasible overlap target: {0}")]
    InfeasibleOverlap(String),

    #[error("warp of kind `{0}` cannot be evaluated at an arbitrary point")]
    WarpNotEvaluable(&'static str),

    #[error("ground truth required")]
    MissingGroundTruth,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures, as opposed to bad inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateConfiguration | Error::Underdetermined | Error::RegistrationFailed
        )
    }
}
