//! Semiparametric estimation in error-in-operator models.
//!
//! The signal `θ` is observed through an image `Z ≈ A*θ` while the operator
//! `A*` itself is only known through a noisy copy `Â`. The estimator maximizes
//! a penalized quartic objective jointly over `(θ, z, A)`; the remaining
//! modules compute the finite-sample quantities that describe its accuracy and
//! check them by simulation.

pub mod datagen;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod info;
pub mod io;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod quadrature;
pub mod rng;
pub mod schur;
pub mod theory;

pub use error::{EioError, Result};
