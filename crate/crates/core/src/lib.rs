//! Two-scale poroelastic material optimization.
//!
//! The offline phase homogenizes parameterized periodic unit cells into
//! effective Biot coefficients and stores them in an interpolated
//! catalogue. The online phase distributes catalogue materials over a
//! macroscopic hexahedral mesh by sequential global programming, trading
//! structural compliance against fluid flux.

pub mod adjoint;
pub mod app;
pub mod catalogue;
pub mod checks;
pub mod config;
pub mod error;
pub mod hex8;
pub mod linalg;
pub mod macrofem;
pub mod micro;
pub mod sgp;
pub mod tensors;

pub use error::{Error, Result};
