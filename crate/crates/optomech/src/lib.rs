//! Simulation, estimation and calibration for continuously measured
//! multimode cavity optomechanical systems.
//!
//! Internal computations use angular frequency (rad/s). Quadratures are
//! ordered `(X1, Y1, X2, Y2, ...)` with vacuum variance ½.

pub mod dsp;
pub mod error;
pub mod estimator;
pub mod fitting;
pub mod io;
pub mod model_core;
pub mod quad;
pub mod simulator;
pub mod tin;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use nalgebra;

pub const TAU: f64 = std::f64::consts::TAU;

/// Hz to rad/s.
#[inline]
pub fn hz(f: f64) -> f64 {
    TAU * f
}
