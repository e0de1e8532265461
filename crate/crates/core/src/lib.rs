//! Random-matrix deterministic equivalents for linear and random-feature
//! regression, Hermite linearizations of network kernels, and gradient-flow
//! dynamics, with seeded Monte Carlo generators to check them against.

pub mod activation;
pub mod det_equiv;
pub mod dynamics;
pub mod error;
pub mod hermite;
pub mod quadrature;
pub mod randgen;
pub mod results;
pub mod rf_nn;
pub mod ridge;
pub mod spectral;

pub use error::{Error, Result};
