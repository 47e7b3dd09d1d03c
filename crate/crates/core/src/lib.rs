//! Bayesian non-parametric spatial factor analysis for longitudinal areal or
//! point-referenced data.

pub mod clustering;
pub mod data;
pub mod diagnostics;
pub mod draws;
pub mod dist;
pub mod error;
pub mod kernels;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod pg;
pub mod prediction;
pub mod psbp;
pub mod sampler;
pub mod simulation;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
