//! Tag-based visual-inertial localization on SE(3), with and without stochastic modeling of
//! tag installation error, plus a Monte Carlo harness comparing the two.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod config;
pub mod error;
pub mod estimator;
pub mod lie;
pub mod mc;
pub mod rng;
pub mod sim;
pub mod tags;

pub use error::{Error, Result};
