use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PassError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("pinching-antenna position {value} m on waveguide {waveguide} is outside [0, {length}] m")]
    PositionOutOfRange {
        waveguide: usize,
        value: f64,
        length: f64,
    },

    #[error("layout violates minimum spacing on waveguide {waveguide}: gap {gap} m < {min_spacing} m")]
    SpacingViolation {
        waveguide: usize,
        gap: f64,
        min_spacing: f64,
    },

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("degenerate placement rectangle: {0}")]
    DegenerateRegion(String),

    #[error("zero channel: {0}")]
    ZeroChannel(String),

    #[error("non-positive group rate {rate} for group {group}")]
    NonPositiveRate { group: usize, rate: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("phase alignment failed on waveguide {waveguide}: {reason}")]
    AlignmentFailed { waveguide: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, PassError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> PassError {
    PassError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
