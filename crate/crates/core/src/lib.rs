//! Displacement-error correction with nonlinear filtering flows and lagged
//! convex iterations, plus a parallel-beam tomography simulator to exercise
//! them on sinograms with perturbed beam angles.

pub mod discrete;
pub mod error;
pub mod flows;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod tomo;
pub mod varsolve;

pub use error::{Error, Result};
pub use grid::{Axis, Extension, ScalarField};
