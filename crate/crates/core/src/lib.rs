//! Transfer learning for nonparametric regression with random forests.
//!
//! A forest is fit on a large source sample, target responses are
//! residualized against it, and a second forest is fit to the residuals with
//! feature-selection probabilities proportional to the sample distance
//! covariance between each feature and the residual. Both centered forests
//! (random feature, midpoint split, fixed depth) and CART forests with
//! weighted feature-subset sampling are supported.

pub mod cart;
pub mod centered;
pub mod data;
pub mod dcov;
pub mod error;
pub mod harness;
pub mod model_file;
pub mod rng;
pub mod simgen;
pub mod transfer;

pub use data::{Dataset, FeatureMatrix};
pub use dcov::{DCovEstimate, DCovKind, FeatureWeights};
pub use error::{Error, Result};
