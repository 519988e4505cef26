//! Synthetic protection-relay fault data, sensor degradation scenarios and
//! robustness evaluation of MLP fault classifiers and locators.

pub mod degrade;
pub mod error;
pub mod eval;
pub mod grid_sim;
pub mod model;
pub mod preprocess;
pub mod runner;
pub mod seed;

pub use error::{Error, Result};
