//! Unbiased squared maximum mean discrepancy with an RBF kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distance::squared_euclidean;
use crate::error::{Error, Result};

/// Pooled samples above this size estimate the median heuristic on a
/// deterministic subsample of this many rows.
pub const MEDIAN_POOL_CAP: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    #[default]
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    pub mmd2: f64,
    pub bandwidth: f64,
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn bandwidth_from_median(median: f64) -> f64 {
    if median > 0.0 && median.is_finite() {
        median
    } else {
        1.0
    }
}

/// Condensed upper-triangle squared distances, one vector per row.
fn condensed<R: AsRef<[f64]> + Sync>(pool: &[&R]) -> Vec<Vec<f64>> {
    (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let a = pool[i].as_ref();
            pool[i + 1..].iter().map(|b| squared_euclidean(a, b.as_ref())).collect()
        })
        .collect()
}

fn median_distance_subsampled<R: AsRef<[f64]> + Sync>(pool: &[&R]) -> f64 {
    // Lexicographic order makes the subsample independent of input order.
    let mut sorted: Vec<&R> = pool.to_vec();
    sorted.sort_by(|a, b| {
        a.as_ref()
            .iter()
            .zip(b.as_ref())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let stride = sorted.len() as f64 / MEDIAN_POOL_CAP as f64;
    let sub: Vec<&R> = (0..MEDIAN_POOL_CAP)
        .map(|i| sorted[((i as f64 * stride) as usize).min(sorted.len() - 1)])
        .collect();
    let mut all: Vec<f64> = condensed(&sub).into_iter().flatten().map(f64::sqrt).collect();
    median_in_place(&mut all)
}

struct KernelSums {
    xx: f64,
    yy: f64,
    xy: f64,
    xy_diag: f64,
}

fn kernel_sums_direct<X, Y>(x: &[X], y: &[Y], gamma: f64, paired: bool) -> KernelSums
where
    X: AsRef<[f64]> + Sync,
    Y: AsRef<[f64]> + Sync,
{
    let k = |a: &[f64], b: &[f64]| (-gamma * squared_euclidean(a, b)).exp();
    let within = |rows: &[&[f64]]| -> f64 {
        let partial: Vec<f64> = (0..rows.len())
            .into_par_iter()
            .map(|i| rows[i + 1..].iter().map(|b| k(rows[i], b)).sum::<f64>())
            .collect();
        2.0 * partial.iter().sum::<f64>()
    };
    let xr: Vec<&[f64]> = x.iter().map(AsRef::as_ref).collect();
    let yr: Vec<&[f64]> = y.iter().map(AsRef::as_ref).collect();
    let cross: Vec<f64> = xr.par_iter().map(|a| yr.iter().map(|b| k(a, b)).sum::<f64>()).collect();
    let xy_diag = if paired { xr.iter().zip(&yr).map(|(a, b)| k(a, b)).sum() } else { 0.0 };
    KernelSums {
        xx: within(&xr),
        yy: within(&yr),
        xy: cross.iter().sum(),
        xy_diag,
    }
}

fn kernel_sums_condensed(tri: &[Vec<f64>], m: usize, gamma: f64, paired: bool) -> KernelSums {
    let k = |d2: f64| (-gamma * d2).exp();
    let rows: Vec<(f64, f64, f64, f64)> = tri
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            // row holds distances from pooled row i to pooled rows i+1..
            if i < m {
                let split = m - i - 1;
                let xx: f64 = row[..split].iter().map(|&d| k(d)).sum();
                let xy: f64 = row[split..].iter().map(|&d| k(d)).sum();
                let diag = if paired { k(row[split + i]) } else { 0.0 };
                (xx, 0.0, xy, diag)
            } else {
                (0.0, row.iter().map(|&d| k(d)).sum(), 0.0, 0.0)
            }
        })
        .collect();
    let mut sums = KernelSums {
        xx: 0.0,
        yy: 0.0,
        xy: 0.0,
        xy_diag: 0.0,
    };
    for (xx, yy, xy, diag) in rows {
        sums.xx += xx;
        sums.yy += yy;
        sums.xy += xy;
        sums.xy_diag += diag;
    }
    sums.xx *= 2.0;
    sums.yy *= 2.0;
    sums
}

/// Unbiased MMD² with `k(a,b) = exp(-|a-b|² / (2σ²))`.
///
/// For equal sample sizes this is the U-statistic over index pairs `i != j`
/// (cross terms `k(x_i, y_i)` excluded), which cancels exactly when `x` and
/// `y` hold the same rows. Unequal sizes use the full cross-kernel mean.
pub fn mmd2_unbiased<X, Y>(x: &[X], y: &[Y], bandwidth: Bandwidth) -> Result<MmdResult>
where
    X: AsRef<[f64]> + Sync,
    Y: AsRef<[f64]> + Sync,
{
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return Err(Error::DegenerateInput(format!("MMD needs at least 2 rows per set, got {m} and {n}")));
    }
    let dim = x[0].as_ref().len();
    if let Some(bad) = x
        .iter()
        .map(|r| r.as_ref().len())
        .chain(y.iter().map(|r| r.as_ref().len()))
        .find(|&d| d != dim)
    {
        return Err(Error::DimensionMismatch { expected: dim, found: bad });
    }
    let paired = m == n;

    let (sigma, sums) = match bandwidth {
        Bandwidth::Fixed(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {s}")));
            }
            (s, kernel_sums_direct(x, y, 1.0 / (2.0 * s * s), paired))
        }
        Bandwidth::MedianHeuristic if m + n <= MEDIAN_POOL_CAP => {
            let pool: Vec<&[f64]> = x.iter().map(AsRef::as_ref).chain(y.iter().map(AsRef::as_ref)).collect();
            let pool_refs: Vec<&&[f64]> = pool.iter().collect();
            let tri = condensed(&pool_refs);
            // median of distances, not of squared distances: the two differ
            // when the middle pair is averaged
            let mut flat: Vec<f64> = tri.iter().flatten().map(|d| d.sqrt()).collect();
            let sigma = bandwidth_from_median(median_in_place(&mut flat));
            drop(flat);
            (sigma, kernel_sums_condensed(&tri, m, 1.0 / (2.0 * sigma * sigma), paired))
        }
        Bandwidth::MedianHeuristic => {
            let pool: Vec<&[f64]> = x.iter().map(AsRef::as_ref).chain(y.iter().map(AsRef::as_ref)).collect();
            let pool_refs: Vec<&&[f64]> = pool.iter().collect();
            let sigma = bandwidth_from_median(median_distance_subsampled(&pool_refs));
            (sigma, kernel_sums_direct(x, y, 1.0 / (2.0 * sigma * sigma), paired))
        }
    };

    let (mf, nf) = (m as f64, n as f64);
    let cross = if paired {
        (sums.xy - sums.xy_diag) / (mf * (mf - 1.0))
    } else {
        sums.xy / (mf * nf)
    };
    let mmd2 = sums.xx / (mf * (mf - 1.0)) + sums.yy / (nf * (nf - 1.0)) - 2.0 * cross;
    Ok(MmdResult { mmd2, bandwidth: sigma })
}
