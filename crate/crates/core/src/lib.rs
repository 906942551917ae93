//! Dynamic item response model: a Rasch-type logistic response model whose
//! abilities follow a dynamic linear model, with daily and per-test random
//! effects and uncertain item difficulties, fitted by block Gibbs sampling.

pub mod distributions;
pub mod error;
pub mod ffbs;
pub mod gibbs;
pub mod inference;
pub mod io;
pub mod model;
pub mod simgen;

pub use error::{Error, Result};
