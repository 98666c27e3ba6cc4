//! Distribution-free predictive inference.

// Argument checks are written `!(a < b)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod calibration;
pub mod conditional;
pub mod conformal;
pub mod crossval;
pub mod error;
pub mod harness;
pub mod independence_regression;
pub mod online;
pub(crate) mod linalg;
pub mod quantile_core;
pub mod risk_multiplicity;
pub mod rng;
pub mod scores;
pub mod special;
pub mod weighted;

pub use error::{Error, Result};
