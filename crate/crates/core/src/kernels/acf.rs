use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::ProfileSet;

pub const DEFAULT_MAX_LAG: usize = 24;

/// Lag 1..=max_lag autocorrelations, one row per usable profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfMatrix {
    pub coefficients: Vec<Vec<f64>>,
    pub max_lag: usize,
    /// Zero-variance rows left out.
    pub excluded: usize,
}

fn centered(x: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let denom: f64 = c.iter().map(|v| v * v).sum();
    let scale: f64 = x.iter().map(|v| v * v).sum();
    if denom == 0.0 || denom <= 1e-20 * scale {
        None
    } else {
        Some((c, denom))
    }
}

fn lagged(c: &[f64], denom: f64, k: usize) -> f64 {
    let num: f64 = c[..c.len() - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
    (num / denom).clamp(-1.0, 1.0)
}

/// Biased-normalization autocorrelation at lag `k` (1 at lag 0); `None` for
/// a zero-variance series.
pub fn autocorrelation_at(x: &[f64], k: usize) -> Option<f64> {
    assert!(k < x.len(), "lag must be below series length");
    let (c, denom) = centered(x)?;
    Some(lagged(&c, denom, k))
}

pub fn acf_rows<R: AsRef<[f64]>>(rows: &[R], max_lag: usize) -> Result<AcfMatrix> {
    let mut coefficients = Vec::with_capacity(rows.len());
    let mut excluded = 0;
    for row in rows {
        let x = row.as_ref();
        if max_lag == 0 || max_lag >= x.len() {
            return Err(Error::LagTooLarge { max_lag, horizon: x.len() });
        }
        match centered(x) {
            Some((c, denom)) => coefficients.push((1..=max_lag).map(|k| lagged(&c, denom, k)).collect()),
            None => excluded += 1,
        }
    }
    Ok(AcfMatrix {
        coefficients,
        max_lag,
        excluded,
    })
}

pub fn acf(profiles: &ProfileSet, max_lag: usize) -> Result<AcfMatrix> {
    if max_lag == 0 || max_lag >= profiles.horizon().len() {
        return Err(Error::LagTooLarge {
            max_lag,
            horizon: profiles.horizon().len(),
        });
    }
    acf_rows(&profiles.rows(), max_lag)
}
