//! Evaluation toolkit for synthetic half-hourly smart meter load profiles.
//!
//! Synthetic datasets are scored against real train/holdout data along three
//! axes: fidelity (distributional closeness), utility (train-on-synthetic,
//! test-on-real) and privacy (reconstruction and membership inference
//! attacks, including attacks on injected outliers).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fidelity;
pub mod fixture;
pub mod generators;
pub mod gmm;
pub mod kernels;
pub mod neural;
pub mod poisoning;
pub mod privacy;
pub mod profile;
pub mod report;
pub mod rng;
pub mod utility;

pub use error::{Error, Result};
pub use profile::{Horizon, Profile, ProfileSet, Role, Season, SplitSpec};
