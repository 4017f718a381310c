//! Optimization-based adaptive iterative learning control for nonlinear
//! time-varying discrete plants.

pub mod config;
pub mod controller;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod linearization;
pub mod output;
pub mod plant;
pub mod triangular;

pub use error::{IlcError, Result};
