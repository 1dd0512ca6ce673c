//! Learning physically interpretable dynamics from port-Hamiltonian building
//! blocks.
//!
//! Models are [`network::Network`]s of [`constructs::Construct`]s joined by
//! power-conserving junctions. A loop-free network reduces to an explicit
//! [`network::OdeSystem`] with analytic partials, which [`odesolve`]
//! integrates together with its parameter sensitivities and [`train`] fits to
//! measured trajectories.

pub mod constructs;
pub mod error;
pub mod io;
pub mod network;
pub mod odesolve;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
