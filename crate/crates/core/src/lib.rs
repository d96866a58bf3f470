//! Alpha-parameterized stochastic integration and Fokker-Planck tools.
//!
//! The integral of a state-dependent noise term depends on where in each
//! partition interval the integrand is evaluated. This crate exposes that
//! choice as a parameter `alpha` in [0, 1] — 0 is the Ito convention, 1/2
//! Stratonovich, 1 anti-Ito — and provides matched machinery on both sides
//! of the duality:
//!
//! * path simulation of dX = a(X) dt + b(X) dW under any alpha
//!   ([`integrate`]),
//! * the corresponding forward and backward generators on a grid, their
//!   gap, and density evolution ([`fpe`]),
//! * steady states and quasipotentials ([`steady`]),
//! * the noise-induced drift and noise-matrix symmetrization that tie the
//!   two pictures together ([`noise_drift`]),
//! * statistical tests for time-reversal symmetry of simulated kernels
//!   ([`stats`]).
//!
//! The headline fact the tooling demonstrates: for pure-noise dynamics
//! (zero external drift), alpha = 1 is the unique choice whose forward and
//! backward generators coincide, i.e. whose transition kernel is symmetric
//! under time reversal.

pub mod error;
pub mod export;
pub mod fpe;
pub mod integrate;
pub mod model;
pub mod noise_drift;
pub mod presets;
pub mod rng;
pub mod sparse;
pub mod stats;
pub mod steady;

pub use error::{Error, Result};
pub use model::{Alpha, Grid, GridDensity, SdeModel};
