//! Kinetic plasma-sheath toolkit.
//!
//! Builds the stationary sheath in front of a completely absorbing wall,
//! evolves the one-dimensional Vlasov-Poisson system around it, and measures
//! the weighted norms that decide whether perturbations decay or grow.

pub mod config;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod poisson;
pub mod quadrature;
pub mod stationary;
pub mod vlasov;

pub use config::{ElectronModel, PlasmaConfig};
pub use distributions::EndState;
pub use error::{Result, SheathError};
