//! Joint optimal control and mobile-actuator guidance for a 2D diffusion-advection
//! process on the unit square.
//!
//! The process is reduced to a finite-dimensional ODE by a spectral Galerkin
//! projection onto Laplacian eigenfunctions. For a given actuator trajectory the
//! control problem is a time-varying LQR solved through a differential Riccati
//! equation; the guidance of the actuator team is then optimized by a
//! forward-backward sweep with projected gradient descent.
//!
//! Module map:
//!
//! - [`spectral`]: basis, quadrature, Galerkin operator, field projection.
//! - [`actuation`]: truncated Gaussian input operator, its location gradient,
//!   and the mobile disturbance.
//! - [`fleet`]: actuator dynamics, guidance profiles and the admissible set.
//! - [`riccati`]: Riccati solve, feedback synthesis, loop simulation.
//! - [`sweep`]: Hamiltonian, costates, guidance gradient and the optimizer.
//! - [`bench`]: strategy comparison and Galerkin-dimension convergence study.
//! - [`config`] and [`export`]: scenario files and result bundles for the CLI.

pub mod actuation;
pub mod bench;
pub mod config;
mod error;
pub mod exec;
pub mod export;
pub mod fleet;
pub mod grid;
pub mod quadrature;
pub mod riccati;
pub mod spectral;
pub mod sweep;

pub use error::{Error, Result};
