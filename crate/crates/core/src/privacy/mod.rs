//! Privacy attacks: distance-based and outlier-poisoned reconstruction, and
//! discriminator membership inference in plain and poisoned variants.

mod mia;
mod reconstruction;

pub use mia::{mia_plain, mia_poisoned, threshold_precision, top_fraction_precision, HoldoutSplit, MiaConfig, MiaResult};
pub use reconstruction::{
    default_ratios, reconstruction_curve, reconstruction_ks, reconstruction_poisoned, CurvePoint, ReconstructionConfig, ReconstructionResult,
    DEFAULT_KS_SAMPLE,
};
