use thiserror::Error;

use crate::rng::Domain;

/// Errors shared by all sampling modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Every category has zero mass (all logits are negative infinity),
    /// so the target categorical distribution does not exist.
    #[error("undefined distribution: {0}")]
    UndefinedDistribution(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A logit was NaN or positive infinity; rows live in (R ∪ {-inf})^V.
    #[error("invalid logit: {0}")]
    InvalidLogit(String),

    /// A random stream was addressed with the wrong domain tag.
    #[error("rng stream domain mismatch: expected {expected:?}, found {found:?}")]
    DomainMismatch { expected: Domain, found: Domain },

    /// The simulated transport observed a malformed or oversized message.
    #[error("transport protocol violation: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, Error>;
