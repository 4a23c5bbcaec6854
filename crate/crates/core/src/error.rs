use thiserror::Error;

/// Errors surfaced by construction and validation of tabular models.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("transition row ({state}, {action}) sums to {sum}, expected 1 within 1e-9")]
    UnnormalizedRow { state: usize, action: usize, sum: f64 },

    #[error("initial distribution sums to {sum}, expected 1 within 1e-9")]
    UnnormalizedInitial { sum: f64 },

    #[error("distribution entry at index {index} is {value}, expected non-negative")]
    NegativeProbability { index: usize, value: f64 },

    #[error("discount factor {gamma} outside [0, 1)")]
    BadDiscount { gamma: f64 },

    #[error("{what} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("embodiment set is empty")]
    EmptyEmbodimentSet,

    #[error("embodiment prior has {got} entries, expected {expected}")]
    PriorSizeMismatch { got: usize, expected: usize },

    #[error("action projector maps unified action {action} to {got}, outside 0..{bound}")]
    BadProjection { action: usize, got: usize, bound: usize },

    #[error("occupancy solve failed: {0}")]
    SingularSystem(String),

    #[error("deterministic policy enumeration needs |A|^|S| <= {bound}, got {got}")]
    EnumerationTooLarge { got: u128, bound: u128 },

    #[error("trajectory space needs (|S||A|)^L <= {bound}, got {got}")]
    TrajectorySpaceTooLarge { got: u128, bound: u128 },

    #[error("trajectory is malformed: {0}")]
    BadTrajectory(String),

    #[error("evidence is impossible under every embodiment")]
    ImpossibleEvidence,

    #[error("{what} is not finite")]
    NonFinite { what: &'static str },

    #[error("config field {field}: {message}")]
    BadConfig { field: &'static str, message: String },

    #[error("optimizer failed to converge: {0}")]
    NoConvergence(String),
}
