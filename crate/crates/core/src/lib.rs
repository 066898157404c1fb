//! Numerical laboratory for doubly nonlinear stochastic parabolic equations
//!
//! ```text
//! dB(u) − div A(∇u) dt = √ε σ(u) dW,   u = 0 on the boundary,
//! ```
//!
//! on a one-dimensional interval: the semi-implicit scheme and its
//! deterministic skeleton, small-noise Monte Carlo, rate-function
//! optimization, and invariant-measure diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod dynamics;
pub mod error;
pub mod ergodic;
pub mod grid;
pub mod ldp;
pub mod montecarlo;
pub mod parallel;

pub use error::{Error, Result};
