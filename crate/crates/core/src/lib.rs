//! Probabilistic execution engine for external stochastic simulators.

pub mod cli;
pub mod controller;
pub mod diagnostics;
pub mod distributions;
pub mod frontend;
pub mod importance;
pub mod mcmc;
pub mod neural;
pub mod protocol;
pub mod reference;
pub mod trace;
pub mod value;

pub use distributions::{DistributionSpec, Rng};
pub use value::Value;
