use thiserror::Error;

/// Error type shared by every module in this crate.
///
/// Variants are grouped by the stage that raises them: grid construction,
/// linear solves, time stepping, and post-run analysis. The CLI maps these
/// onto process exit codes, so new variants should stay coarse enough to
/// classify as "bad input" versus "violated invariant".
#[derive(Debug, Error)]
pub enum KsError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid resolution: {0}")]
    InvalidResolution(String),

    #[error("field does not belong to this grid (field grid id {field}, grid id {grid})")]
    GridMismatch { field: u64, grid: u64 },

    #[error("cell {cell} holds {value:.3e}, below the required floor {floor:.3e}")]
    BelowFloor { cell: usize, value: f64, floor: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("supercritical chi: {0}")]
    SupercriticalChi(String),

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("positivity violation: {0}")]
    PositivityViolation(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("trajectory mismatch: {0}")]
    TrajectoryMismatch(String),

    #[error("snapshot format: {0}")]
    SnapshotFormat(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KsError>;
