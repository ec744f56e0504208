use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group order: {0}")]
    InvalidOrder(String),

    #[error("group closure failed: {0}")]
    Construction(String),

    #[error("no standard representation for group {0}")]
    NoStandardRep(String),

    #[error("representations belong to different groups: {0} vs {1}")]
    GroupMismatch(String, String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("symmetry violation: {0}")]
    SymmetryViolation(String),

    #[error("numeric failure at step {step}: {what}")]
    NumericFailure { step: usize, what: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("no cached forward pass; call forward before backward")]
    NoCachedForward,

    #[error("did not converge within {0} iterations")]
    NonConvergence(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
