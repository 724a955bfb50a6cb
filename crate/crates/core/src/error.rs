use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside trajectory domain [0, {end}]")]
    Domain { t: f64, end: f64 },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate trajectory: {0}")]
    Degenerate(String),

    #[error("invalid knot vector: {0}")]
    Knots(String),

    #[error("infeasible path: {0}")]
    InfeasiblePath(String),

    #[error("singular interpolation system")]
    SingularSystem,

    #[error("solver error at iteration {iteration}: {message}")]
    Solver { iteration: usize, message: String },

    #[error("numerical breakdown in {0}")]
    NumericalBreakdown(String),

    #[error("planning failed: {0}")]
    PlanningFailed(String),

    #[error("path has {len} waypoints but the model supports at most {max}")]
    UnsupportedLength { len: usize, max: usize },

    #[error("unsupported model configuration: {0}")]
    UnsupportedConfig(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        /// Epochs completed before the abort.
        history: Vec<crate::neural::EpochRecord>,
    },

    #[error("dataset record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
