use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ks_one_tailed, nearest_neighbor_distances, nearest_neighbors, KsResult};
use crate::poisoning::OutlierRegistry;
use crate::profile::ProfileSet;
use crate::rng::seeded;

/// Synthetic rows used by the distance-based KS attack when no size is set.
pub const DEFAULT_KS_SAMPLE: usize = 2000;

/// `0.05, 0.10, ..., 1.00`.
pub fn default_ratios() -> Vec<f64> {
    (1..=20).map(|i| (5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub threshold_ratios: Vec<f64>,
    /// `None` means `min(|synthetic|, 2000)`.
    pub synthetic_sample_size: Option<usize>,
    pub seed: u64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            threshold_ratios: default_ratios(),
            synthetic_sample_size: None,
            seed: 0,
        }
    }
}

impl ReconstructionConfig {
    fn validate(&self) -> Result<()> {
        if self.threshold_ratios.is_empty() {
            return Err(Error::InvalidConfig("at least one threshold ratio is required".into()));
        }
        if let Some(r) = self.threshold_ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::InvalidConfig(format!("threshold ratio {r} outside (0, 1]")));
        }
        if self.threshold_ratios.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("threshold ratios must be strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ratio: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    /// Fraction of seen outliers reconstructed at each configured ratio.
    pub fraction_reconstructed: Vec<CurvePoint>,
    /// Nearest-synthetic distance of each seen outlier over its norm.
    pub per_outlier_nn_distance_ratio: Vec<f64>,
    /// Distance-based KS attack, when it was run alongside.
    pub ks: Option<KsResult>,
}

impl ReconstructionResult {
    pub fn fraction_at(&self, ratio: f64) -> Option<f64> {
        self.fraction_reconstructed
            .iter()
            .find(|p| (p.ratio - ratio).abs() <= 1e-12)
            .map(|p| p.fraction)
    }

    /// `ratio,fraction` table.
    pub fn write_curve<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["ratio", "fraction"])?;
        for p in &self.fraction_reconstructed {
            wtr.write_record([p.ratio.to_string(), p.fraction.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<writer>", e))?;
        Ok(())
    }
}

/// Distance ratio for one outlier. A zero-norm outlier counts as
/// reconstructed only by an exact copy.
fn distance_ratio(distance: f64, norm: f64) -> f64 {
    if norm > 0.0 {
        distance / norm
    } else if distance == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Fraction of `ratios` values at or below each threshold.
pub fn reconstruction_curve(per_outlier: &[f64], thresholds: &[f64]) -> Vec<CurvePoint> {
    let n = per_outlier.len() as f64;
    thresholds
        .iter()
        .map(|&r| CurvePoint {
            ratio: r,
            fraction: per_outlier.iter().filter(|&&q| q <= r).count() as f64 / n,
        })
        .collect()
}

/// Outlier-poisoned reconstruction: an injected outlier counts as
/// reconstructed at ratio `r` when some synthetic profile lies within
/// `r * ||outlier||` of it.
pub fn reconstruction_poisoned(registry: &OutlierRegistry, synthetic: &ProfileSet, config: &ReconstructionConfig) -> Result<ReconstructionResult> {
    config.validate()?;
    if synthetic.is_empty() || registry.seen.is_empty() {
        return Err(Error::InsufficientSamples(
            "poisoned reconstruction needs synthetic rows and seen outliers".into(),
        ));
    }
    let nn = nearest_neighbor_distances(&registry.seen, synthetic)?;
    let per_outlier: Vec<f64> = registry
        .seen
        .profiles()
        .iter()
        .zip(&nn.nn_distance)
        .map(|(o, &d)| distance_ratio(d, o.values.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    Ok(ReconstructionResult {
        fraction_reconstructed: reconstruction_curve(&per_outlier, &config.threshold_ratios),
        per_outlier_nn_distance_ratio: per_outlier,
        ks: None,
    })
}

/// Distance-based reconstruction attack. Synthetic rows (sampled without
/// replacement) closer to train than to holdout push the statistic up. The
/// larger of train and holdout is down-sampled to the size of the smaller.
pub fn reconstruction_ks(
    train: &ProfileSet,
    holdout: &ProfileSet,
    synthetic: &ProfileSet,
    sample_size: Option<usize>,
    seed: u64,
) -> Result<KsResult> {
    train.ensure_same_horizon(holdout)?;
    train.ensure_same_horizon(synthetic)?;
    if train.is_empty() || holdout.is_empty() || synthetic.is_empty() {
        return Err(Error::InsufficientSamples(
            "KS attack needs non-empty train, holdout and synthetic sets".into(),
        ));
    }
    let mut rng = seeded(seed);
    let size = sample_size.unwrap_or(DEFAULT_KS_SAMPLE).min(synthetic.len());
    let query = sample_rows(synthetic, size, &mut rng);
    // nearest-neighbour distances shrink as the reference set grows, so both
    // references are cut to the same size before comparing
    let reference = train.len().min(holdout.len());
    let train_ref = sample_rows(train, reference, &mut rng);
    let holdout_ref = sample_rows(holdout, reference, &mut rng);
    let to_train = nearest_neighbors(&query, &train_ref).nn_distance;
    let to_holdout = nearest_neighbors(&query, &holdout_ref).nn_distance;
    ks_one_tailed(&to_train, &to_holdout)
}

/// `size` rows without replacement, in original order.
fn sample_rows<'a>(set: &'a ProfileSet, size: usize, rng: &mut crate::rng::Rng) -> Vec<&'a [f64]> {
    let rows = set.rows();
    if size >= rows.len() {
        return rows;
    }
    let mut picked = index::sample(rng, rows.len(), size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| rows[i]).collect()
}
