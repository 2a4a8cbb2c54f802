//! Superadiabatic expansions of spectral projectors for slowly driven
//! quantum systems: tabulated expansion coefficients, a high-accuracy
//! propagator for comparison, and explicit error bounds with their
//! optimal truncation.

pub mod bounds;
pub mod chebyshev;
pub mod error;
pub mod hamiltonian;
pub mod harness;
pub mod linalg;
pub mod nenciu;
pub mod propagator;
pub mod quadrature;
pub mod schedule;

pub use error::{Error, Result};
