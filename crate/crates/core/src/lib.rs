//! Safe active learning of controlled stochastic dynamics.
//!
//! The crate simulates a controlled SDE, estimates state densities and safety/reset
//! probabilities from sampled trajectories, fits kernel ridge regressors over
//! `(theta, t)` with predictive uncertainty, and grows a certified safe set of
//! controls by sampling the most uncertain feasible candidate.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod config;
pub mod density;
pub mod error;
pub mod explorer;
pub mod harness;
pub mod kernel;
pub mod oracle;
pub mod sde;

pub use error::{Error, Result};
