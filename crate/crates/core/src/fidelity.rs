//! Distributional closeness of a synthetic set to a real one: temporal
//! structure (ACF), per-slot statistics, peaks, cluster membership and
//! cluster-aggregated load.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{self, FitConfig, GmmModel};
use crate::kernels::{
    acf_rows, kl_divergence, mmd2_unbiased, per_slot_statistics, top_n_peaks, Bandwidth, SlotStatistics, DEFAULT_MAX_LAG, DEFAULT_SMOOTHING,
};
use crate::profile::ProfileSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityConfig {
    pub acf_max_lag: usize,
    pub quantiles: Vec<f64>,
    pub peaks_n: usize,
    pub clusters_k: usize,
    pub mmd_bandwidth: Bandwidth,
    pub kl_smoothing: f64,
    pub seed: u64,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            acf_max_lag: DEFAULT_MAX_LAG,
            quantiles: vec![0.5, 0.95],
            peaks_n: 4,
            clusters_k: 25,
            mmd_bandwidth: Bandwidth::MedianHeuristic,
            kl_smoothing: DEFAULT_SMOOTHING,
            seed: 0,
        }
    }
}

impl FidelityConfig {
    fn validate(&self) -> Result<()> {
        if self.acf_max_lag == 0 || self.peaks_n == 0 || self.clusters_k == 0 {
            return Err(Error::InvalidConfig("acf_max_lag, peaks_n and clusters_k must be positive".into()));
        }
        if let Some(q) = self.quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::InvalidConfig(format!("quantile {q} outside (0,1)")));
        }
        if !(self.kl_smoothing >= 0.0) {
            return Err(Error::InvalidConfig("kl_smoothing must be non-negative".into()));
        }
        Ok(())
    }

    fn gmm_config(&self) -> FitConfig {
        FitConfig::with_k(self.clusters_k, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileDeviation {
    pub quantile: f64,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedFidelity {
    pub cluster_total_mae: f64,
    pub cluster_total_rmse: f64,
    /// `None` when fewer than two comparable cluster totals exist.
    pub aggregated_acf_mmd: Option<f64>,
    pub aggregated_peaks_mmd: Option<f64>,
    pub compared_clusters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExclusionCounts {
    pub acf_real: usize,
    pub acf_synthetic: usize,
    pub empty_synthetic_clusters: usize,
    pub empty_real_clusters: usize,
    pub aggregated_acf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub acf_mmd: f64,
    pub mean_deviation_sum: f64,
    pub quantile_deviation_sums: Vec<QuantileDeviation>,
    pub profile_mmd: f64,
    pub peaks_mmd: f64,
    pub cluster_kl: f64,
    pub real_cluster_distribution: Vec<f64>,
    pub synthetic_cluster_distribution: Vec<f64>,
    pub aggregated: AggregatedFidelity,
    pub exclusion_counts: ExclusionCounts,
}

fn check_pair(real: &ProfileSet, synthetic: &ProfileSet) -> Result<()> {
    real.ensure_same_horizon(synthetic)?;
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::InsufficientSamples("fidelity needs non-empty real and synthetic sets".into()));
    }
    Ok(())
}

/// ACF-MMD with the counts of zero-variance rows left out on each side.
fn acf_mmd_rows<R: AsRef<[f64]>>(real: &[R], synthetic: &[R], config: &FidelityConfig) -> Result<(f64, usize, usize)> {
    let a = acf_rows(real, config.acf_max_lag)?;
    let b = acf_rows(synthetic, config.acf_max_lag)?;
    if a.coefficients.len() < 2 || b.coefficients.len() < 2 {
        return Err(Error::InsufficientSamples(
            "ACF fidelity needs at least 2 non-constant profiles per set".into(),
        ));
    }
    let mmd = mmd2_unbiased(&a.coefficients, &b.coefficients, config.mmd_bandwidth)?;
    Ok((mmd.mmd2, a.excluded, b.excluded))
}

pub fn acf_fidelity(real: &ProfileSet, synthetic: &ProfileSet, config: &FidelityConfig) -> Result<f64> {
    check_pair(real, synthetic)?;
    Ok(acf_mmd_rows(&real.rows(), &synthetic.rows(), config)?.0)
}

/// Sum over slots of absolute differences between the per-slot mean, and
/// between each per-slot quantile.
pub fn deviation_sums(real: &ProfileSet, synthetic: &ProfileSet, config: &FidelityConfig) -> Result<(f64, Vec<QuantileDeviation>)> {
    check_pair(real, synthetic)?;
    let a = per_slot_statistics(&real.rows(), &config.quantiles)?;
    let b = per_slot_statistics(&synthetic.rows(), &config.quantiles)?;
    Ok(deviation_from_stats(&a, &b))
}

fn abs_diff_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn deviation_from_stats(a: &SlotStatistics, b: &SlotStatistics) -> (f64, Vec<QuantileDeviation>) {
    let quantiles = a
        .quantile_levels
        .iter()
        .zip(a.quantiles.iter().zip(&b.quantiles))
        .map(|(&quantile, (qa, qb))| QuantileDeviation {
            quantile,
            sum: abs_diff_sum(qa, qb),
        })
        .collect();
    (abs_diff_sum(&a.mean, &b.mean), quantiles)
}

fn peaks_rows<R: AsRef<[f64]>>(rows: &[R], n: usize) -> Vec<Vec<f64>> {
    rows.iter().map(|r| top_n_peaks(r.as_ref(), n)).collect()
}

pub fn peaks_fidelity(real: &ProfileSet, synthetic: &ProfileSet, config: &FidelityConfig) -> Result<f64> {
    check_pair(real, synthetic)?;
    config.validate()?;
    let a = peaks_rows(&real.rows(), config.peaks_n);
    let b = peaks_rows(&synthetic.rows(), config.peaks_n);
    Ok(mmd2_unbiased(&a, &b, config.mmd_bandwidth)?.mmd2)
}

pub fn profile_fidelity(real: &ProfileSet, synthetic: &ProfileSet, config: &FidelityConfig) -> Result<f64> {
    check_pair(real, synthetic)?;
    Ok(mmd2_unbiased(&real.rows(), &synthetic.rows(), config.mmd_bandwidth)?.mmd2)
}

/// Cluster labels of both sets under one mixture fit on the real set.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub model: GmmModel,
    pub real_labels: Vec<usize>,
    pub synthetic_labels: Vec<usize>,
}

impl ClusterAssignment {
    pub fn fit(real: &ProfileSet, synthetic: &ProfileSet, config: &FidelityConfig) -> Result<ClusterAssignment> {
        check_pair(real, synthetic)?;
        config.validate()?;
        let model = gmm::fit(real, &config.gmm_config())?.model;
        Ok(ClusterAssignment {
            real_labels: model.predict(&real.rows())?.labels,
            synthetic_labels: model.predict(&synthetic.rows())?.labels,
            model,
        })
    }

    fn distribution(labels: &[usize], k: usize) -> Vec<f64> {
        let mut counts = vec![0.0; k];
        for &l in labels {
            counts[l] += 1.0;
        }
        let n = labels.len() as f64;
        counts.iter().map(|c| c / n).collect()
    }

    pub fn real_distribution(&self) -> Vec<f64> {
        Self::distribution(&self.real_labels, self.model.k())
    }

    pub fn synthetic_distribution(&self) -> Vec<f64> {
        Self::distribution(&self.synthetic_labels, self.model.k())
    }
}

/// `KL(real || synthetic)` between cluster label distributions, plus both
/// distributions.
pub fn cluster_fidelity(real: &ProfileSet, synthetic: &ProfileSet, config: &FidelityConfig) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let clusters = ClusterAssignment::fit(real, synthetic, config)?;
    cluster_kl(&clusters, config)
}

fn cluster_kl(clusters: &ClusterAssignment, config: &FidelityConfig) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let p = clusters.real_distribution();
    let q = clusters.synthetic_distribution();
    Ok((kl_divergence(&p, &q, config.kl_smoothing)?, p, q))
}

fn cluster_totals(rows: &[&[f64]], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let len = rows.first().map_or(0, |r| r.len());
    let mut totals = vec![vec![0.0; len]; k];
    let mut counts = vec![0; k];
    for (row, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (t, v) in totals[l].iter_mut().zip(*row) {
            *t += v;
        }
    }
    (totals, counts)
}

pub fn aggregated_fidelity(real: &ProfileSet, synthetic: &ProfileSet, config: &FidelityConfig) -> Result<(AggregatedFidelity, ExclusionCounts)> {
    let clusters = ClusterAssignment::fit(real, synthetic, config)?;
    aggregated_from(real, synthetic, &clusters, config)
}

/// Cluster-total comparison. Synthetic totals are rescaled by
/// `n_real / n_synthetic` per cluster; clusters empty on either side are
/// skipped and counted.
fn aggregated_from(
    real: &ProfileSet,
    synthetic: &ProfileSet,
    clusters: &ClusterAssignment,
    config: &FidelityConfig,
) -> Result<(AggregatedFidelity, ExclusionCounts)> {
    let k = clusters.model.k();
    let (real_totals, real_counts) = cluster_totals(&real.rows(), &clusters.real_labels, k);
    let (syn_totals, syn_counts) = cluster_totals(&synthetic.rows(), &clusters.synthetic_labels, k);
    let mut exclusions = ExclusionCounts::default();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for c in 0..k {
        match (real_counts[c], syn_counts[c]) {
            (0, _) => exclusions.empty_real_clusters += 1,
            (_, 0) => exclusions.empty_synthetic_clusters += 1,
            (nr, ns) => {
                let scale = nr as f64 / ns as f64;
                a.push(real_totals[c].clone());
                b.push(syn_totals[c].iter().map(|v| v * scale).collect::<Vec<f64>>());
            }
        }
    }
    if a.is_empty() {
        return Err(Error::DegenerateInput("no cluster is populated in both sets".into()));
    }
    let cells = (a.len() * real.horizon().len()) as f64;
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for (ra, rb) in a.iter().zip(&b) {
        for (x, y) in ra.iter().zip(rb) {
            abs_sum += (x - y).abs();
            sq_sum += (x - y) * (x - y);
        }
    }
    let (aggregated_acf_mmd, aggregated_peaks_mmd) = if a.len() >= 2 {
        let acf = match acf_mmd_rows(&a, &b, config) {
            Ok((v, ea, eb)) => {
                exclusions.aggregated_acf = ea + eb;
                Some(v)
            }
            Err(Error::InsufficientSamples(_)) => None,
            Err(e) => return Err(e),
        };
        let peaks = mmd2_unbiased(&peaks_rows(&a, config.peaks_n), &peaks_rows(&b, config.peaks_n), config.mmd_bandwidth)?.mmd2;
        (acf, Some(peaks))
    } else {
        (None, None)
    };
    Ok((
        AggregatedFidelity {
            cluster_total_mae: abs_sum / cells,
            cluster_total_rmse: (sq_sum / cells).sqrt(),
            aggregated_acf_mmd,
            aggregated_peaks_mmd,
            compared_clusters: a.len(),
        },
        exclusions,
    ))
}

/// All five metrics, sharing one mixture fit between the cluster and
/// aggregate metrics.
pub fn evaluate(real: &ProfileSet, synthetic: &ProfileSet, config: &FidelityConfig) -> Result<FidelityReport> {
    check_pair(real, synthetic)?;
    config.validate()?;
    let real_rows = real.rows();
    let syn_rows = synthetic.rows();
    let (acf_mmd, acf_real, acf_synthetic) = acf_mmd_rows(&real_rows, &syn_rows, config)?;
    let (mean_deviation_sum, quantile_deviation_sums) = deviation_sums(real, synthetic, config)?;
    let profile_mmd = mmd2_unbiased(&real_rows, &syn_rows, config.mmd_bandwidth)?.mmd2;
    let peaks_mmd = peaks_fidelity(real, synthetic, config)?;
    let clusters = ClusterAssignment::fit(real, synthetic, config)?;
    let (cluster_kl, real_dist, syn_dist) = cluster_kl(&clusters, config)?;
    let (aggregated, mut exclusion_counts) = aggregated_from(real, synthetic, &clusters, config)?;
    exclusion_counts.acf_real = acf_real;
    exclusion_counts.acf_synthetic = acf_synthetic;
    Ok(FidelityReport {
        acf_mmd,
        mean_deviation_sum,
        quantile_deviation_sums,
        profile_mmd,
        peaks_mmd,
        cluster_kl,
        real_cluster_distribution: real_dist,
        synthetic_cluster_distribution: syn_dist,
        aggregated,
        exclusion_counts,
    })
}

/// Per-slot table: `slot,real_mean,synthetic_mean,real_q<q>,synthetic_q<q>,...`.
pub fn write_slot_table<W: Write>(writer: W, real: &ProfileSet, synthetic: &ProfileSet, quantiles: &[f64]) -> Result<()> {
    check_pair(real, synthetic)?;
    let a = per_slot_statistics(&real.rows(), quantiles)?;
    let b = per_slot_statistics(&synthetic.rows(), quantiles)?;
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["slot".to_string(), "real_mean".into(), "synthetic_mean".into()];
    for q in quantiles {
        header.push(format!("real_q{q}"));
        header.push(format!("synthetic_q{q}"));
    }
    wtr.write_record(&header)?;
    for slot in 0..a.mean.len() {
        let mut record = vec![slot.to_string(), a.mean[slot].to_string(), b.mean[slot].to_string()];
        for qi in 0..quantiles.len() {
            record.push(a.quantiles[qi][slot].to_string());
            record.push(b.quantiles[qi][slot].to_string());
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Horizon, Role};
    use crate::rng::seeded;
    use rand::Rng;

    fn noisy_set(seed: u64, n: usize) -> ProfileSet {
        let mut rng = seeded(seed);
        let rows = (0..n)
            .map(|i| {
                let level = 0.2 + 0.3 * (i % 3) as f64;
                (0..48)
                    .map(|s| level + 0.2 * ((s as f64) / 48.0 * std::f64::consts::TAU).sin().abs() + 0.05 * rng.random::<f64>())
                    .collect()
            })
            .collect();
        ProfileSet::from_rows(rows, Horizon::Daily, Role::Train).unwrap()
    }

    fn small_config() -> FidelityConfig {
        FidelityConfig {
            clusters_k: 3,
            ..FidelityConfig::default()
        }
    }

    #[test]
    fn identity_is_zero() {
        let real = noisy_set(1, 120);
        let r = evaluate(&real, &real.with_role(Role::Synthetic), &small_config()).unwrap();
        assert!(r.acf_mmd.abs() <= 1e-10);
        assert!(r.profile_mmd.abs() <= 1e-10);
        assert!(r.peaks_mmd.abs() <= 1e-10);
        assert_eq!(r.mean_deviation_sum, 0.0);
        assert!(r.quantile_deviation_sums.iter().all(|q| q.sum == 0.0));
        assert!(r.cluster_kl.abs() <= 1e-9);
        assert_eq!(r.aggregated.cluster_total_mae, 0.0);
        assert_eq!(r.aggregated.cluster_total_rmse, 0.0);
        assert!((r.real_cluster_distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_deviation() {
        let real = noisy_set(2, 50);
        let shifted: Vec<Vec<f64>> = real.rows().iter().map(|r| r.iter().map(|v| v + 0.1).collect()).collect();
        let syn = ProfileSet::from_rows(shifted, Horizon::Daily, Role::Synthetic).unwrap();
        let (mean, q) = deviation_sums(&real, &syn, &FidelityConfig::default()).unwrap();
        assert!((mean - 4.8).abs() < 1e-9, "{mean}");
        assert!(q.iter().all(|d| (d.sum - 4.8).abs() < 1e-9));
    }

    #[test]
    fn ones_vs_twos() {
        let a = ProfileSet::from_rows(vec![vec![1.0; 48]], Horizon::Daily, Role::Train).unwrap();
        let b = ProfileSet::from_rows(vec![vec![2.0; 48]], Horizon::Daily, Role::Synthetic).unwrap();
        let (mean, q) = deviation_sums(&a, &b, &FidelityConfig::default()).unwrap();
        assert_eq!(mean, 48.0);
        assert!(q.iter().all(|d| d.sum == 48.0));
    }

    #[test]
    fn permuted_slots_raise_acf_mmd() {
        let real = noisy_set(3, 80);
        let mut rng = seeded(4);
        let permuted: Vec<Vec<f64>> = real
            .rows()
            .iter()
            .map(|r| {
                let mut v = r.to_vec();
                rand::seq::SliceRandom::shuffle(v.as_mut_slice(), &mut rng);
                v
            })
            .collect();
        let syn = ProfileSet::from_rows(permuted, Horizon::Daily, Role::Synthetic).unwrap();
        let cfg = FidelityConfig::default();
        let base = acf_fidelity(&real, &real, &cfg).unwrap();
        assert!(acf_fidelity(&real, &syn, &cfg).unwrap() > base);
    }

    #[test]
    fn shifted_and_doubled_peaks() {
        let real = noisy_set(5, 80);
        let cfg = FidelityConfig::default();
        let base = peaks_fidelity(&real, &real, &cfg).unwrap();
        let shifted: Vec<Vec<f64>> = real.rows().iter().map(|r| (0..48).map(|s| r[(s + 36) % 48]).collect()).collect();
        let doubled: Vec<Vec<f64>> = real.rows().iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        for rows in [shifted, doubled] {
            let syn = ProfileSet::from_rows(rows, Horizon::Daily, Role::Synthetic).unwrap();
            assert!(peaks_fidelity(&real, &syn, &cfg).unwrap() > base);
        }
    }

    #[test]
    fn single_cluster_scaled_by_two() {
        let real = noisy_set(6, 40);
        let doubled: Vec<Vec<f64>> = real.rows().iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        let syn = ProfileSet::from_rows(doubled, Horizon::Daily, Role::Synthetic).unwrap();
        let cfg = FidelityConfig {
            clusters_k: 1,
            ..FidelityConfig::default()
        };
        let (agg, _) = aggregated_fidelity(&real, &syn, &cfg).unwrap();
        let total: Vec<f64> = (0..48).map(|s| real.rows().iter().map(|r| r[s]).sum()).collect();
        let expected = total.iter().map(|v| v.abs()).sum::<f64>() / 48.0;
        assert!((agg.cluster_total_mae - expected).abs() < 1e-9 * expected);
        assert_eq!(agg.aggregated_acf_mmd, None);
        assert_eq!(agg.compared_clusters, 1);
    }

    #[test]
    fn largest_cluster_only_has_positive_kl() {
        let real = noisy_set(7, 90);
        let cfg = small_config();
        let clusters = ClusterAssignment::fit(&real, &real, &cfg).unwrap();
        let p = clusters.real_distribution();
        let biggest = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        let idx: Vec<usize> = (0..real.len()).filter(|&i| clusters.real_labels[i] == biggest).collect();
        let syn = real.select(&idx).with_role(Role::Synthetic);
        let (kl, p, q) = cluster_fidelity(&real, &syn, &cfg).unwrap();
        // the closed form on the measured distributions, with smoothing
        let l = p.len() as f64;
        let a = cfg.kl_smoothing;
        let expected: f64 = p
            .iter()
            .zip(&q)
            .map(|(pi, qi)| {
                let (ps, qs) = ((pi + a) / (1.0 + l * a), (qi + a) / (1.0 + l * a));
                ps * (ps / qs).ln()
            })
            .sum();
        assert!(kl > 0.0);
        assert!((kl - expected).abs() < 1e-12);
        let coarse = FidelityConfig { kl_smoothing: 1e-2, ..cfg };
        assert!(cluster_fidelity(&real, &syn, &coarse).unwrap().0 < kl);
    }

    #[test]
    fn slot_table_shape() {
        let real = noisy_set(8, 10);
        let mut out = Vec::new();
        write_slot_table(&mut out, &real, &real, &[0.5, 0.95]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "slot,real_mean,synthetic_mean,real_q0.5,synthetic_q0.5,real_q0.95,synthetic_q0.95"
        );
        assert_eq!(lines.count(), 48);
    }
}
