//! Numerical laboratory for the spatially homogeneous Boltzmann equation with
//! non-cutoff, very soft collision kernels.

pub mod angular;
pub mod collision;
mod engine;
pub mod error;
mod fft;
pub mod functionals;
pub mod grid;
pub mod harness;
pub mod inequalities;
pub mod oracle;
pub mod quad;
pub mod solver;
pub mod stencil;
pub mod verdict;

pub use error::{Error, Result};
