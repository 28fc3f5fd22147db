//! Independent reference implementations used as test oracles. They are
//! written for clarity, not speed, and share no code with the library.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Exhaustive nearest neighbour: first index attaining the minimum.
pub fn brute_nn(query: &[Vec<f64>], reference: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let mut dist = Vec::new();
    let mut idx = Vec::new();
    for q in query {
        let mut best = (f64::INFINITY, 0);
        for (j, r) in reference.iter().enumerate() {
            let d = sq(q, r);
            if d < best.0 {
                best = (d, j);
            }
        }
        dist.push(best.0.sqrt());
        idx.push(best.1);
    }
    (dist, idx)
}

/// Median of all pooled pairwise Euclidean distances.
pub fn median_sigma(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pool: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d = Vec::new();
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            d.push(sq(pool[i], pool[j]).sqrt());
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        (d[n / 2 - 1] + d[n / 2]) / 2.0
    }
}

/// Unbiased MMD² by explicit loops over every index pair. With equal sizes
/// the cross term skips `i == j`, as in the U-statistic.
pub fn naive_mmd2(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> f64 {
    let k = |a: &Vec<f64>, b: &Vec<f64>| (-sq(a, b) / (2.0 * sigma * sigma)).exp();
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut xx = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                xx += k(&x[i], &x[j]);
            }
        }
    }
    let mut yy = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                yy += k(&y[i], &y[j]);
            }
        }
    }
    let mut xy = 0.0;
    let paired = x.len() == y.len();
    for i in 0..x.len() {
        for j in 0..y.len() {
            if !(paired && i == j) {
                xy += k(&x[i], &y[j]);
            }
        }
    }
    let cross = if paired { xy / (m * (m - 1.0)) } else { xy / (m * n) };
    xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * cross
}

/// `max(0, sup_x F_a(x) - F_b(x))`, evaluating both empirical CDFs at every
/// pooled point by counting.
pub fn ks_d_plus(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| cdf(a, x) - cdf(b, x)).fold(0.0, f64::max)
}

pub fn ks_p(d: f64, m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    (-2.0 * d * d * m * n / (m + n)).exp()
}

/// ρ(k) straight from the textbook formula.
pub fn acf_oracle(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let num: f64 = (0..n - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum();
    let den: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    num / den
}
