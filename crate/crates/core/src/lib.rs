//! Modified-flow analysis of gradient descent, stochastic gradient descent,
//! and two-player simultaneous gradient descent.
//!
//! The crate builds the continuous-time flows that discrete optimizers follow
//! to first order in the learning rate, integrates them accurately, and
//! measures how closely the discrete iterates track them.

pub mod calculus;
pub mod error;
pub mod flows;
pub mod harness;
pub mod integrators;
pub mod optimizers;
pub mod param;
pub mod problems;
pub mod regularizers;
pub mod table;

pub use error::{Error, Result};
pub use param::ParamVector;
