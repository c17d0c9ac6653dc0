//! Counterfactual-mean and average-treatment-effect estimation from
//! observational data, with score-equation-based propensity balance
//! diagnostics.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balance;
pub mod basis;
pub mod dataset;
pub mod effects;
pub mod error;
pub mod glm;
pub mod nuisance;
pub mod pipeline;
pub mod sim;
pub mod stats;

pub use dataset::Dataset;
pub use error::{Error, Result};
