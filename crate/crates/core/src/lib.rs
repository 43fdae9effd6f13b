//! Numerical laboratory for quantitative stochastic homogenization of
//! divergence-form elliptic equations with random coefficients.

pub mod corrector;
pub mod energies;
pub mod error;
pub mod fields;
pub mod homerr;
pub mod io;
pub mod seed;
pub mod renorm;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
