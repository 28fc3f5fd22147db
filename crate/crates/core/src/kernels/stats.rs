use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-slot mean and quantile profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotStatistics {
    pub mean: Vec<f64>,
    pub quantile_levels: Vec<f64>,
    /// One row per entry of `quantile_levels`.
    pub quantiles: Vec<Vec<f64>>,
}

impl SlotStatistics {
    /// `(1 + |quantiles|) x L` matrix, mean first.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        std::iter::once(self.mean.clone()).chain(self.quantiles.iter().cloned()).collect()
    }
}

/// Linear interpolation between order statistics: position `(n - 1) q`.
pub fn linear_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn per_slot_statistics<R: AsRef<[f64]>>(rows: &[R], quantiles: &[f64]) -> Result<SlotStatistics> {
    if rows.is_empty() {
        return Err(Error::InsufficientSamples("per-slot statistics need at least one profile".into()));
    }
    if let Some(&q) = quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::InvalidConfig(format!("quantile {q} outside (0,1)")));
    }
    let len = rows[0].as_ref().len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; len];
    let mut out = vec![vec![0.0; len]; quantiles.len()];
    let mut column = Vec::with_capacity(rows.len());
    for slot in 0..len {
        column.clear();
        column.extend(rows.iter().map(|r| r.as_ref()[slot]));
        mean[slot] = column.iter().sum::<f64>() / n;
        column.sort_by(f64::total_cmp);
        for (qi, &q) in quantiles.iter().enumerate() {
            out[qi][slot] = linear_quantile(&column, q);
        }
    }
    Ok(SlotStatistics {
        mean,
        quantile_levels: quantiles.to_vec(),
        quantiles: out,
    })
}
