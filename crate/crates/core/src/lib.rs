//! Analytical performance model for speculative decoding at large batch and
//! long context.

pub mod cli;
pub mod drafting;
pub mod error;
pub mod perf_model;
pub mod planner;
pub mod presets;
pub mod reports;
pub mod simulator;
pub mod speedup;

pub use error::{Error, Result};
