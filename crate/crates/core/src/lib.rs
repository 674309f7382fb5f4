//! Stirring process with boundary reservoirs: lattice geometry, transition
//! kernels, the discrete and macroscopic density equations, Monte Carlo
//! engines, exact small-system solvers and the correlation estimates.

pub mod error;
pub mod estimates;
pub mod exact;
pub mod hydro;
pub mod kernels;
pub mod lattice;
pub mod pde;
pub mod quad;
pub mod sim;
pub mod vfn;

pub use error::{Error, Result};
pub use lattice::{LatticeParams, Side, Site};
