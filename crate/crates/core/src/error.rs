use thiserror::Error;

use crate::lds::Trajectory;

/// Rejected inputs: wrong shapes or parameters out of range.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LdsError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("net of size {size} exceeds cap {cap}")]
    NetTooLarge { size: f64, cap: usize },
}

/// Unrecoverable controller failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    /// A probe scale left the floating range; carries its natural log.
    #[error("certified overflow computing {what}: ln value {log_value}")]
    CertifiedOverflow { what: &'static str, log_value: f64 },
    #[error("candidate controllers exhausted after {switches} switches")]
    Exhausted { switches: u64 },
    #[error("internal assertion failed: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RolloutError {
    #[error("controller failed at t = {t}: {source}")]
    Controller { t: usize, source: ControlError },
    #[error("non-finite value at t = {t}")]
    NumericOverflow { t: usize },
    #[error("bad dimension at t = {t}: {source}")]
    Dimension { t: usize, source: LdsError },
}

/// A rollout that stopped early, with everything recorded up to the failure.
#[derive(Debug, Clone)]
pub struct RolloutFailure {
    pub partial: Trajectory,
    pub error: RolloutError,
}

impl std::fmt::Display for RolloutFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} recorded steps)", self.error, self.partial.steps.len())
    }
}

impl std::error::Error for RolloutFailure {}
