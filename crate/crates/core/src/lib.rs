//! Interacting particle systems steered by a handful of leaders.
//!
//! A swarm of `N` followers is advected by a pairwise interaction kernel and
//! by leader-attached kernels weighted with the leaders' control; the `m`
//! leaders themselves are velocity-controlled directly. On top of that
//! microscopic model the crate provides:
//!
//! * empirical measures and exact 1-Wasserstein distances between them,
//! * a particle solver for the large-`N` transport equation, with weak-form
//!   residuals, perturbation stability and convergence studies,
//! * adjoint-based optimal control of the leaders at fixed `N`, plus the
//!   machinery to watch optimal costs converge as `N` grows,
//! * a binary-collision (Boltzmann-type) sampler whose grazing-interaction
//!   limit is checked against the transport solver,
//! * an instantaneous pairwise feedback controller driven by a closed-form
//!   linear system.
//!
//! Every random draw comes from counter-based seeded streams, so any run is
//! reproducible bit for bit regardless of thread count.

mod error;
mod geom;
mod rng;

pub mod binaryctrl;
pub mod gamma_limit;
pub mod io;
pub mod kernels;
pub mod kinetic;
pub mod meanfield;
pub mod measures;
pub mod microdynamics;
pub mod optctrl;
mod transport;

pub use error::{Error, Result};
