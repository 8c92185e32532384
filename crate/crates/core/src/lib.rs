//! Receding-horizon platoon formation for one connected automated vehicle
//! (CAV) leading a string of human-driven vehicles (HDVs).
//!
//! The crate contains the vehicle and gap kinematics, the car-following
//! models, online parameter identification, closed-form feasibility checks,
//! the condensed QP controller and a deterministic closed-loop simulator.

pub mod domain;
pub mod error;
pub mod estimation;
pub mod feasibility;
pub mod hdv;
pub mod io;
pub mod rhc;
pub mod sim;

pub use error::{Error, Result};

/// Crate version recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
