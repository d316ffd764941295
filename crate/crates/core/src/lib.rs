//! Receding-horizon control of finite-dimensional bilinear systems.
//!
//! Each receding-horizon window solves a finite-horizon optimal control
//! problem whose terminal cost is a Taylor expansion of the value function
//! around the origin (zero, quadratic from the Riccati equation, or cubic).
//! The crate also reproduces the convergence-rate sweep over sampling times
//! and prediction horizons.

pub mod check;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod rhc;
pub mod riccati;

pub use error::{Error, Result};
pub mod lbfgs;
pub mod ocp;
pub mod simulate;
pub mod taylor;
