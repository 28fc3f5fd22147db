//! Diagonal-covariance Gaussian mixtures fit by expectation-maximization.
//!
//! Used to cluster profiles for the cluster and aggregate fidelity metrics
//! and as the smooth reference generator.

use std::f64::consts::PI;
use std::fs::File;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{Horizon, ProfileSet, Role};
use crate::rng::{seeded, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub k: usize,
    /// Stop once the mean log-likelihood improves by less than `tol` relative.
    pub tol: f64,
    pub max_iter: usize,
    pub variance_floor: f64,
    pub seed: u64,
    pub n_init: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k: 25,
            tol: 1e-6,
            max_iter: 200,
            variance_floor: 1e-6,
            seed: 0,
            n_init: 3,
        }
    }
}

impl FitConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        FitConfig {
            k,
            seed,
            ..FitConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.max_iter == 0 || self.n_init == 0 {
            return Err(Error::InvalidConfig("k, max_iter and n_init must be positive".into()));
        }
        if !(self.tol > 0.0) || !(self.variance_floor > 0.0) {
            return Err(Error::InvalidConfig("tol and variance_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub config: FitConfig,
}

/// A fitted model plus the mean log-likelihood trace of the winning restart.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Final mean log-likelihood of every restart, in restart order.
    pub restart_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub responsibilities: Vec<Vec<f64>>,
}

struct Precomputed {
    log_weights: Vec<f64>,
    inv_var: Vec<Vec<f64>>,
    log_norm: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn precompute(&self) -> Precomputed {
        Precomputed {
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            inv_var: self.variances.iter().map(|v| v.iter().map(|x| 1.0 / x).collect()).collect(),
            log_norm: self
                .variances
                .iter()
                .map(|v| -0.5 * v.iter().map(|x| (2.0 * PI * x).ln()).sum::<f64>())
                .collect(),
        }
    }

    /// Per-component joint log densities `log w_c + log N(x | c)`.
    #[allow(clippy::needless_range_loop)]
    fn joint_log(&self, pre: &Precomputed, x: &[f64], out: &mut [f64]) {
        for c in 0..self.k() {
            if self.weights[c] == 0.0 {
                out[c] = f64::NEG_INFINITY;
                continue;
            }
            let mut q = 0.0;
            for ((xi, mu), iv) in x.iter().zip(&self.means[c]).zip(&pre.inv_var[c]) {
                let d = xi - mu;
                q += d * d * iv;
            }
            out[c] = pre.log_weights[c] + pre.log_norm[c] - 0.5 * q;
        }
    }

    /// Normalizes `logs` into responsibilities in place; returns log p(x).
    fn normalize(logs: &mut [f64]) -> f64 {
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in logs.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in logs.iter_mut() {
            *v /= total;
        }
        max + total.ln()
    }

    fn check_dim<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<()> {
        if let Some(bad) = rows.iter().map(|r| r.as_ref().len()).find(|&d| d != self.dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: bad,
            });
        }
        Ok(())
    }

    /// Responsibilities for every row plus the per-row log-likelihood.
    fn e_step<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let pre = self.precompute();
        rows.par_iter()
            .map(|x| {
                let mut r = vec![0.0; self.k()];
                self.joint_log(&pre, x.as_ref(), &mut r);
                let ll = Self::normalize(&mut r);
                (r, ll)
            })
            .unzip()
    }

    pub fn mean_log_likelihood<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> Result<f64> {
        self.check_dim(rows)?;
        let (_, ll) = self.e_step(rows);
        Ok(ll.iter().sum::<f64>() / rows.len() as f64)
    }

    /// Maximum-posterior labels; ties go to the lowest component index.
    pub fn predict<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> Result<Prediction> {
        self.check_dim(rows)?;
        let (responsibilities, _) = self.e_step(rows);
        let labels = responsibilities
            .iter()
            .map(|r| {
                let mut best = 0;
                for (c, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        Ok(Prediction { labels, responsibilities })
    }

    /// Draws `n` rows; negative draws are clamped to 0 and counted.
    pub fn sample_rows(&self, n: usize, seed: u64) -> (Vec<Vec<f64>>, usize) {
        let mut rng = seeded(seed);
        let mut cumulative = Vec::with_capacity(self.k());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        let mut clamped = 0;
        let rows = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                let c = cumulative.iter().position(|&cum| u < cum).unwrap_or(self.k() - 1);
                self.means[c]
                    .iter()
                    .zip(&self.variances[c])
                    .map(|(mu, var)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let v = mu + var.sqrt() * z;
                        if v < 0.0 {
                            clamped += 1;
                            0.0
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        (rows, clamped)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GmmModel> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

fn column_variance<R: AsRef<[f64]>>(rows: &[R], floor: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].as_ref().len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s = (*s / n).max(floor));
    (mean, var)
}

/// k-means++ seeding: further rows are chosen with probability proportional
/// to their squared distance from the nearest chosen centre.
fn kmeans_pp<R: AsRef<[f64]>>(rows: &[R], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centers = vec![rows[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| crate::kernels::squared_euclidean(r.as_ref(), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&v| {
                    acc += v;
                    u < acc
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        let c = rows[idx].as_ref().to_vec();
        for (dv, r) in d2.iter_mut().zip(rows) {
            *dv = dv.min(crate::kernels::squared_euclidean(r.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

fn m_step<R: AsRef<[f64]>>(rows: &[R], resp: &[Vec<f64>], model: &mut GmmModel, floor: f64) {
    let (k, d) = (model.k(), model.dim());
    let n = rows.len() as f64;
    let mut mass = vec![0.0; k];
    let mut sums = vec![vec![0.0; d]; k];
    for (x, r) in rows.iter().zip(resp) {
        for c in 0..k {
            let rc = r[c];
            if rc == 0.0 {
                continue;
            }
            mass[c] += rc;
            for (s, v) in sums[c].iter_mut().zip(x.as_ref()) {
                *s += rc * v;
            }
        }
    }
    for c in 0..k {
        model.weights[c] = mass[c] / n;
        if mass[c] > 0.0 {
            model.means[c] = sums[c].iter().map(|s| s / mass[c]).collect();
        }
    }
    let mut sq = vec![vec![0.0; d]; k];
    for (x, r) in rows.iter().zip(resp) {
        for c in 0..k {
            let rc = r[c];
            if rc == 0.0 {
                continue;
            }
            for ((s, v), mu) in sq[c].iter_mut().zip(x.as_ref()).zip(&model.means[c]) {
                let dv = v - mu;
                *s += rc * dv * dv;
            }
        }
    }
    for c in 0..k {
        if mass[c] > 0.0 {
            model.variances[c] = sq[c].iter().map(|s| (s / mass[c]).max(floor)).collect();
        }
    }
}

fn fit_once<R: AsRef<[f64]> + Sync>(rows: &[R], config: &FitConfig, restart: u64) -> (GmmModel, Vec<f64>, bool) {
    let mut rng = substream(config.seed, restart);
    let (_, global_var) = column_variance(rows, config.variance_floor);
    let means = kmeans_pp(rows, config.k, &mut rng);
    let mut model = GmmModel {
        weights: vec![1.0 / config.k as f64; config.k],
        variances: vec![global_var; config.k],
        means,
        config: config.clone(),
    };
    let n = rows.len() as f64;
    let mut trace = Vec::new();
    let mut converged = false;
    loop {
        let (resp, ll) = model.e_step(rows);
        let mean_ll = ll.iter().sum::<f64>() / n;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (mean_ll - prev).abs() <= config.tol * prev.abs().max(1e-12) {
                trace.push(mean_ll);
                converged = true;
                break;
            }
        }
        trace.push(mean_ll);
        if trace.len() > config.max_iter {
            break;
        }
        m_step(rows, &resp, &mut model, config.variance_floor);
    }
    (model, trace, converged)
}

/// Fits a mixture, keeping the best of `n_init` restarts by final
/// log-likelihood (earliest restart on ties).
pub fn fit_rows<R: AsRef<[f64]> + Sync>(rows: &[R], config: &FitConfig) -> Result<GmmFit> {
    config.validate()?;
    if rows.len() < config.k {
        return Err(Error::TooFewRows {
            needed: config.k,
            got: rows.len(),
        });
    }
    let d = rows[0].as_ref().len();
    if let Some(bad) = rows.iter().map(|r| r.as_ref().len()).find(|&x| x != d) {
        return Err(Error::DimensionMismatch { expected: d, found: bad });
    }
    let mut best: Option<(GmmModel, Vec<f64>, bool)> = None;
    let mut restart_scores = Vec::with_capacity(config.n_init);
    for restart in 0..config.n_init as u64 {
        let run = fit_once(rows, config, restart);
        let score = *run.1.last().expect("trace is never empty");
        restart_scores.push(score);
        if best.as_ref().is_none_or(|b| score > *b.1.last().unwrap()) {
            best = Some(run);
        }
    }
    let (model, trace, converged) = best.expect("n_init >= 1");
    if let Some(c) = model.variances.iter().position(|v| v.iter().any(|x| !(x.is_finite() && *x > 0.0))) {
        return Err(Error::DegenerateComponent(c));
    }
    Ok(GmmFit {
        model,
        trace,
        converged,
        restart_scores,
    })
}

pub fn fit(data: &ProfileSet, config: &FitConfig) -> Result<GmmFit> {
    fit_rows(&data.rows(), config)
}

/// Samples a synthetic profile set; returns it with the clamp count.
pub fn sample(model: &GmmModel, n: usize, seed: u64, horizon: Horizon) -> Result<(ProfileSet, usize)> {
    if model.dim() != horizon.len() {
        return Err(Error::HorizonMismatch {
            expected: horizon.len(),
            found: model.dim(),
        });
    }
    let (rows, clamped) = model.sample_rows(n, seed);
    Ok((ProfileSet::from_rows(rows, horizon, Role::Synthetic)?, clamped))
}
