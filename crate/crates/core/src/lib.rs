//! Fair counterfactual recourse for tabular binary classifiers.
//!
//! A soft actor-critic agent searches for a small set of shared actions
//! (delta vectors over actionable features) that give the affected
//! population recourse while keeping the two protected groups on equal
//! footing, either in how many people each group can help (equal
//! effectiveness) or in how many usable actions each group gets (equal
//! choice of recourse).

pub mod baseline;
pub mod cluster;
pub mod error;
pub mod fairness;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod recourse;
pub mod report;
pub mod rl_env;
pub mod sac;
pub mod synthetic;
pub mod tabular;

pub use error::{Error, Result};
