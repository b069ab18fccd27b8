//! Quasi-incompressible Cahn-Hilliard-Navier-Stokes solver on a uniform
//! rectangle grid, with diagnostics and a dense operator lab.
//!
//! See the guide in `book/` for a walkthrough.

pub mod cli;
pub mod config;
pub mod convergence;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod lab;
pub mod linear_step;
pub mod phase;
pub mod picard;
pub mod sparse;
pub mod strain;

pub use error::{Error, Result};
