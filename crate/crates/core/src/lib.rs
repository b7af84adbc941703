//! Multi-objective Bayesian optimization for low-carbon concrete mixtures.

pub mod campaign;
pub mod error;
pub mod gp;
pub mod moo;
pub mod objectives;
pub mod service;
pub mod strength;

pub use error::{Error, Result};
