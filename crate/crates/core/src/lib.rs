//! Gradient-based Bayesian experimental design.
//!
//! Estimators of the expected information gain (EIG) and of its gradient with
//! respect to the design, projected stochastic gradient ascent over box
//! constrained designs, and tools to validate the resulting designs.

pub mod dual;
pub mod eig_est;
pub mod cli;
pub mod config;
pub mod error;
pub mod grad_est;
pub mod model;
pub mod ode;
pub mod optim;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod selftest;
pub mod stats;
pub mod validate;

pub use error::{Error, Result};
