//! Multilevel Richardson-Romberg (ML2R) and multilevel Monte Carlo (MLMC)
//! estimators: extrapolation weights, parameter planning, a deterministic
//! parallel execution engine, benchmark models and a table-reproduction harness.

pub mod bench;
pub mod engine;
pub mod error;
pub mod models;
pub mod plan;
pub mod rng;
pub mod weights;

pub use error::{Error, Result};
