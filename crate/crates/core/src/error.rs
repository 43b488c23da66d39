//! Error type shared by all numerical modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Two fields that must live on the same grid do not.
    #[error("grid mismatch: expected {expected:?}, found {found:?}")]
    GridMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    /// Grid construction with unusable dimensions.
    #[error("invalid grid {nx}x{ny}: {reason}")]
    InvalidGrid {
        nx: usize,
        ny: usize,
        reason: &'static str,
    },

    /// A configuration value violates a module invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Time integration blew up (L-infinity norm crossed the guard).
    #[error("integration diverged at step {step} (linf = {linf:.3e})")]
    Divergence { step: usize, linf: f64 },

    /// The requested operation does not support this configuration.
    #[error("unsupported configuration: {0}")]
    Unsupported(&'static str),

    /// Backtracking line search exhausted its halvings without descent.
    #[error("line search stalled at iteration {iteration} after {halvings} halvings")]
    LineSearchStall { iteration: usize, halvings: usize },

    /// Image intensities outside the normalized [0, 1] contract.
    #[error("{what} not normalized to [0,1]: range [{min:.4}, {max:.4}]")]
    NotNormalized { what: &'static str, min: f64, max: f64 },

    /// Training loss became non-finite.
    #[error("training diverged at step {step}: loss is not finite")]
    TrainingDiverged { step: u64 },

    /// Reverse-diffusion state became non-finite.
    #[error("sampling diverged at diffusion step {step}")]
    SamplingDiverged { step: usize },

    /// An ensemble operation received too few samples.
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
