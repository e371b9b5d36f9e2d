//! Simulation and analysis toolkit for the one-dimensional Cucker-Smale model
//! with singular communication weight `|r|^(-beta)`.
//!
//! The toolkit covers all three exponent regimes. Below beta = 1 the dynamics
//! flock unconditionally and particles may cross or stick; the integrator
//! detects both event kinds and merges stuck groups. At beta = 1 flocking is
//! still unconditional but collisions cannot occur. Above beta = 1 the
//! interaction is short-range: the asymptotic cluster structure, the critical
//! coupling strength, and explicit distance bounds are all available in
//! closed form and can be cross-validated against simulated trajectories.
//!
//! Modules:
//! - [`potential`]: the weight, its antiderivatives, inverses and limits
//! - [`model`]: first-order reduction, normalization, velocity fields
//! - [`integrator`]: adaptive integration with event handling
//! - [`clustering`]: closed-form cluster prediction and critical couplings
//! - [`analysis`]: explicit bounds, the equilibrium solver, diagnostics
//! - [`cli`]: configuration, subcommand dispatch, file emission

pub mod analysis;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod instance;
pub mod integrator;
pub mod model;
pub mod potential;

pub use error::{Error, Result};
pub use model::{FirstOrderState, ModelParams, SecondOrderState, Shift};
pub use potential::{Potential, Regime};
