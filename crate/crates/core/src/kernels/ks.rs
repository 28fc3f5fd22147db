use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided two-sample Kolmogorov-Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// sup over x of (F_train(x) - F_holdout(x)).
    pub statistic: f64,
    pub p_value: f64,
    pub m: usize,
    pub n: usize,
}

impl KsResult {
    /// True when the null (synthetic no closer to train than to holdout)
    /// is rejected at `alpha`.
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Asymptotic one-sided p-value `exp(-2 D^2 m n / (m + n))`.
pub fn one_sided_p_value(statistic: f64, m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    (-2.0 * statistic * statistic * m * n / (m + n)).exp().clamp(0.0, 1.0)
}

/// One-tailed KS test. A large statistic means synthetic rows sit closer to
/// train than to holdout.
pub fn ks_one_tailed(distances_to_train: &[f64], distances_to_holdout: &[f64]) -> Result<KsResult> {
    let (m, n) = (distances_to_train.len(), distances_to_holdout.len());
    if m < 5 || n < 5 {
        return Err(Error::InsufficientSamples(format!(
            "KS test needs at least 5 samples per side, got {m} and {n}"
        )));
    }
    if distances_to_train.iter().chain(distances_to_holdout).any(|v| v.is_nan()) {
        return Err(Error::DegenerateInput("NaN distance".into()));
    }
    let mut a = distances_to_train.to_vec();
    let mut b = distances_to_holdout.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);

    let (mut i, mut j) = (0, 0);
    let mut d_plus: f64 = 0.0;
    while i < m || j < n {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < m && a[i] <= v {
            i += 1;
        }
        while j < n && b[j] <= v {
            j += 1;
        }
        d_plus = d_plus.max(i as f64 / m as f64 - j as f64 / n as f64);
    }
    Ok(KsResult {
        statistic: d_plus,
        p_value: one_sided_p_value(d_plus, m, n),
        m,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs() {
        let v = [0.3, 0.1, 0.7, 0.2, 0.9, 0.4];
        let r = ks_one_tailed(&v, &v).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn fully_separated() {
        let r = ks_one_tailed(&[0.0; 6], &[1.0; 8]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.p_value, (-2.0f64 * 48.0 / 14.0).exp());
        // the opposite direction carries no evidence
        let r = ks_one_tailed(&[1.0; 6], &[0.0; 8]).unwrap();
        assert_eq!(r.statistic, 0.0);
    }

    #[test]
    fn too_few() {
        assert!(matches!(ks_one_tailed(&[1.0; 4], &[1.0; 9]), Err(Error::InsufficientSamples(_))));
    }

    #[test]
    fn p_decreases_with_statistic() {
        let mut last = 1.0;
        for k in 1..=20 {
            let p = one_sided_p_value(k as f64 / 20.0, 30, 40);
            assert!(p < last);
            last = p;
        }
    }
}
