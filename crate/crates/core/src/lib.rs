//! Degenerate real and complex Hessian equations in normalized Bellman form.
//!
//! The pipeline runs bottom-up: `matcore` supplies matrices and spectra,
//! `operators` the Hessian functions and their cones, `bellman` the control
//! coefficients, `geometry` domain certification, `solver` grids, policy
//! iteration and Monte Carlo, `complexlift` the reduction of complex problems
//! to real ones, and `cli` the batch front-end.

pub mod error;
pub mod matcore;
pub mod operators;
pub mod bellman;
pub mod geometry;
pub mod solver;
pub mod complexlift;
pub mod cli;

pub use error::{Error, Result};
