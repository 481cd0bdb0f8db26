//! Reduced-order models for the nonlinear 2D shallow water equations.
//!
//! Three reduced models are built on top of a full implicit finite-difference
//! solver: standard POD Galerkin, tensorial POD (precomputed quadratic
//! coefficient tensors) and POD/DEIM.

pub mod bench;
pub mod deim;
pub mod error;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod operators;
pub mod pod;
pub mod poly;
pub mod rom;
pub mod solver;
pub mod swe;

pub use error::{Result, RomError};
