//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by construction, integration, and training routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A matrix or vector had the wrong shape for the requested operation.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// A structural constraint (skew, symmetric, orthogonal, Stiefel) failed
    /// at construction time.
    #[error("{kind} constraint violated: defect {defect:.3e} exceeds tolerance {tolerance:.1e}")]
    Constraint {
        kind: &'static str,
        defect: f64,
        tolerance: f64,
    },

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// The integrator produced a non-finite state.
    #[error("integration produced a non-finite value at step {step}")]
    Integration { step: usize },

    /// An environment rollout produced a non-finite state or score.
    #[error("rollout produced a non-finite value at environment step {step}")]
    Rollout { step: usize },

    /// An objective evaluation failed during ES estimation.
    #[error("objective evaluation returned a non-finite value at perturbation {index}")]
    Evaluator { index: usize },

    /// An objective evaluation failed during training.
    #[error("training aborted at iteration {iteration}: {reason}")]
    Training { iteration: usize, reason: String },

    /// A gradient-ratio profile was requested for a zero terminal gradient.
    #[error("gradient ratio profile requires a nonzero terminal gradient")]
    ZeroTerminalGradient,

    /// An SRGD update drifted off the manifold beyond the recovery threshold.
    #[error("manifold defect {defect:.3e} after update exceeds {tolerance:.1e}")]
    ManifoldDrift { defect: f64, tolerance: f64 },

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Dataset loading or validation failure.
    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dimension(
        context: &'static str,
        expected: impl Into<String>,
        found: impl Into<String>,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.into(),
            found: found.into(),
        }
    }
}
