use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 1e-6;

/// `KL(p || q)` after additive smoothing of both vectors and renormalization.
pub fn kl_divergence(p: &[f64], q: &[f64], smoothing: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidConfig(format!("smoothing must be non-negative, got {smoothing}")));
    }
    for v in [p, q] {
        if v.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidConfig("probabilities must be non-negative".into()));
        }
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("probabilities sum to {total}, not 1")));
        }
    }
    let norm = 1.0 + smoothing * p.len() as f64;
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        let (pi, qi) = ((pi + smoothing) / norm, (qi + smoothing) / norm);
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::ZeroMass { index: i, p: pi });
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        assert_eq!(kl_divergence(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], 0.0).unwrap(), 0.0);
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8], 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn closed_form() {
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let kl = kl_divergence(&[0.5, 0.5], &[0.25, 0.75], 0.0).unwrap();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.1438).abs() < 1e-4);
    }

    #[test]
    fn zero_mass() {
        assert!(matches!(
            kl_divergence(&[1.0, 0.0], &[0.0, 1.0], 0.0),
            Err(Error::ZeroMass { index: 0, .. })
        ));
        assert!(kl_divergence(&[1.0, 0.0], &[0.0, 1.0], 1e-6).unwrap() > 10.0);
    }

    #[test]
    fn grows_as_smoothing_shrinks() {
        let p = [0.6, 0.4, 0.0];
        let q = [1.0, 0.0, 0.0];
        let a = kl_divergence(&p, &q, 1e-2).unwrap();
        let b = kl_divergence(&p, &q, 1e-4).unwrap();
        let c = kl_divergence(&p, &q, 1e-6).unwrap();
        assert!(a < b && b < c);
    }
}
