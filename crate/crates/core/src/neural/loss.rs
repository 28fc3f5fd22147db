use serde::{Deserialize, Serialize};

use super::mlp::{sigmoid, OutputHead};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    BinaryCrossEntropy,
    MeanSquaredError,
    /// Quantile loss at level `q`.
    Pinball(f64),
}

/// `q u` for `u = y - y_hat >= 0`, `(q - 1) u` otherwise.
pub fn pinball_loss(y: f64, y_hat: f64, q: f64) -> f64 {
    let u = y - y_hat;
    if u >= 0.0 {
        q * u
    } else {
        (q - 1.0) * u
    }
}

impl Loss {
    /// Loss and derivative with respect to the pre-head output `z`.
    /// Cross-entropy always reads `z` as a logit.
    pub fn value_and_grad(self, z: f64, y: f64, head: OutputHead) -> (f64, f64) {
        match self {
            Loss::BinaryCrossEntropy => {
                let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                (loss, sigmoid(z) - y)
            }
            Loss::MeanSquaredError | Loss::Pinball(_) => {
                let (p, dp) = match head {
                    OutputHead::Linear => (z, 1.0),
                    OutputHead::SigmoidLogit => {
                        let s = sigmoid(z);
                        (s, s * (1.0 - s))
                    }
                };
                let (l, dl) = match self {
                    Loss::MeanSquaredError => ((p - y) * (p - y), 2.0 * (p - y)),
                    Loss::Pinball(q) => {
                        let g = if y - p >= 0.0 { -q } else { 1.0 - q };
                        (pinball_loss(y, p, q), g)
                    }
                    Loss::BinaryCrossEntropy => unreachable!(),
                };
                (l, dl * dp)
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            Loss::BinaryCrossEntropy => "bce".into(),
            Loss::MeanSquaredError => "mse".into(),
            Loss::Pinball(q) => format!("pinball({q})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_values() {
        assert_eq!(pinball_loss(2.0, 2.0, 0.95), 0.0);
        assert!((pinball_loss(3.0, 2.0, 0.95) - 0.95).abs() < 1e-15);
        assert!((pinball_loss(2.0, 3.0, 0.95) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let (l, g) = Loss::BinaryCrossEntropy.value_and_grad(800.0, 1.0, OutputHead::SigmoidLogit);
        assert!(l.is_finite() && l < 1e-300_f64.max(0.0) + 1e-12);
        assert_eq!(g, 0.0);
        let (l, _) = Loss::BinaryCrossEntropy.value_and_grad(-800.0, 1.0, OutputHead::SigmoidLogit);
        assert!((l - 800.0).abs() < 1e-9);
    }
}
