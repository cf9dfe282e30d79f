use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Why a stationary sheath does not exist for the requested parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum NotSolvableReason {
    /// The Bohm integral is not below one.
    BohmViolated { bohm_integral: f64 },
    /// The wall potential reaches the first zero of the Sagdeev potential.
    PhiBTooLarge { phi_b: f64, sup_b: f64 },
}

impl fmt::Display for NotSolvableReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotSolvableReason::BohmViolated { bohm_integral } => {
                write!(f, "Bohm criterion violated (K = {bohm_integral:.6} >= 1)")
            }
            NotSolvableReason::PhiBTooLarge { phi_b, sup_b } => {
                write!(f, "wall potential {phi_b} is not below sup B = {sup_b}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SheathError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),

    #[error("no stationary solution: {0}")]
    NotSolvable(NotSolvableReason),

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("perturbation weight overflow at cell ({ix}, {iv})")]
    WeightOverflow { ix: usize, iv: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("no admissible constants found (best margin {best_margin:e})")]
    NotFound { best_margin: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl SheathError {
    /// Configuration problems map to exit code 1, everything else to 2.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            SheathError::InvalidConfig(_) | SheathError::Serialization(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SheathError>;
