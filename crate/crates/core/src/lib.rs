//! Panel-data production function estimation and subsidy impact analysis.
//!
//! The crate implements a three-step empirical pipeline on farm-level panel
//! data: dynamic-panel GMM estimation of a Cobb-Douglas production function,
//! minimum-distance recovery of the structural elasticities with total factor
//! productivity as the residual, and a second dynamic-panel regression of
//! productivity on subsidy payments. A synthetic-panel generator with known
//! ground truth backs the Monte Carlo verification suites.

pub mod acf;
pub mod diagnostics;
pub mod error;
pub mod fadn;
pub mod gmm;
pub mod instruments;
pub mod linalg;
pub mod optimize;
pub mod panel;
pub mod production;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
