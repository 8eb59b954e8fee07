//! Propensity-score balancing weights for weighted average treatment effects.
//!
//! The crate covers the whole pipeline: a logistic propensity model and
//! linear outcome models ([`glm`]), selection functions and weight
//! diagnostics ([`weights`]), Hájek, augmented and doubly-robust point
//! estimators ([`estimators`]), closed-form sandwich variances from stacked
//! estimating equations ([`variance`]), and a Monte Carlo harness
//! ([`simulation`]).

pub mod analysis;
pub mod data;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod linalg;
pub mod report;
pub mod simulation;
pub mod variance;
pub mod weights;

pub use data::{Dataset, Flavor, NuisanceSpec, Thresholds, WateResult, WeightScheme};
pub use error::{Error, Result};
