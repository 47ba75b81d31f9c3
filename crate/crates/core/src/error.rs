use thiserror::Error;

/// Errors raised by the reduced-order HJB pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid discretization: {0}")]
    InvalidDiscretization(String),

    #[error("integration failed at t = {time:e}: {reason}")]
    IntegrationFailure { time: f64, reason: String },

    #[error("trajectory {index}: {source}")]
    TrajectoryFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid scale: {0}")]
    InvalidScale(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate snapshot set: {0}")]
    DegenerateSnapshots(String),

    #[error("rank {r} out of range (basis has d = {d} modes)")]
    RankOutOfRange { r: usize, d: usize },

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("grid too fine: {nodes} nodes exceed the budget of {budget}")]
    GridTooFine { nodes: u128, budget: usize },

    #[error("arrival cache needs {bytes} bytes, budget is {budget}")]
    CacheBudget { bytes: u128, budget: usize },

    #[error("Riccati solve failed: {reason} (residual history {history:?})")]
    Riccati { reason: String, history: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures of a numerical method, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IntegrationFailure { .. }
                | Error::TrajectoryFailure { .. }
                | Error::DegenerateSnapshots(_)
                | Error::Riccati { .. }
        )
    }
}
