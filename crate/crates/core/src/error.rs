use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline, calibration,
/// evaluation and file handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point at zero range has no defined direction")]
    ZeroRange,

    #[error("scan contains no points")]
    EmptyScan,

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("degenerate point geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no consensus: best model has {found} inliers, at least {required} required")]
    NoConsensus { found: usize, required: usize },

    #[error("singular vehicle geometry: {0}")]
    SingularGeometry(String),

    #[error("timestamp {next} does not advance past {previous}")]
    NonMonotonicTimestamp { previous: f64, next: f64 },

    #[error("insufficient motion: {0}")]
    InsufficientMotion(String),

    #[error("ambiguous direction of travel: {0}")]
    AmbiguousDirection(String),

    #[error("insufficient excitation: {0}")]
    InsufficientExcitation(String),

    #[error("no reference yaw-rate series supplied")]
    NoReference,

    #[error("degenerate maneuver: {0}")]
    DegenerateManeuver(String),

    #[error("trajectories do not overlap in time")]
    NoOverlap,

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
