//! Error types shared across the crate.

use thiserror::Error;

use crate::potential::Regime;

/// Crate-wide error type. The CLI maps these onto exit codes: configuration
/// problems exit 2, domain/regime violations exit 3, solver and integration
/// failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (bad flags, unreadable config
    /// file, missing required data).
    #[error("config error: {0}")]
    Config(String),

    /// A parameter violates its contract (n < 2, kappa <= 0, empty grid, ...).
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// An operation was called on a potential of the wrong exponent regime.
    #[error("{operation} requires the {required} regime, but beta = {beta} is {actual:?}")]
    Regime {
        operation: &'static str,
        required: &'static str,
        actual: Regime,
        beta: f64,
    },

    /// Evaluation outside the mathematical domain (singularity at zero
    /// separation, coincident particles where the kernel diverges).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inverse evaluated outside its range.
    #[error("range error: {0}")]
    Range(String),

    /// Input data is not in the zero-mean frame and strict mode is on.
    #[error("not in the zero-mean frame: {0}")]
    Normalization(String),

    /// Adaptive stepping drove the step size below `min_step`.
    #[error(
        "integration stalled at t = {time}: required step {step:e} fell below min_step {min_step:e} \
         (closest pair ({i}, {j}) at distance {distance:e})"
    )]
    Stiffness {
        time: f64,
        i: usize,
        j: usize,
        distance: f64,
        step: f64,
        min_step: f64,
    },

    /// Nonlinear solver did not converge.
    #[error("solver failure: {0}")]
    Solver(String),

    /// A diagnostic could not be computed from the available data.
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvalidParam(_)
            | Error::Regime { .. }
            | Error::Domain(_)
            | Error::Range(_)
            | Error::Normalization(_) => 3,
            Error::Stiffness { .. } | Error::Solver(_) | Error::Diagnostic(_) | Error::Io(_) => 4,
        }
    }
}
