//! Small feed-forward networks for attack discriminators and TSTR task models.

mod loss;
mod mlp;
mod train;

pub use loss::{pinball_loss, Loss};
pub use mlp::{Gradients, Layer, MlpModel, OutputHead};
pub use train::{train, train_with, TrainConfig, Trained, MOMENTUM};

use crate::error::Result;

/// Hidden widths shared by the discriminator, classifier and forecasters.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

pub const FD_STEP: f64 = 1e-5;

/// `[input, 64, 32, 1]`.
pub fn default_layers(input: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(DEFAULT_HIDDEN);
    sizes.push(1);
    sizes
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences over every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`, so near-zero gradients compare absolutely.
pub fn gradient_check<R, T>(model: &MlpModel, loss: Loss, inputs: &[R], targets: &[T]) -> Result<f64>
where
    R: AsRef<[f64]>,
    T: AsRef<[f64]>,
{
    let (_, grads) = model.loss_and_gradient(inputs, targets, loss)?;
    let analytic = grads.flatten();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let original = *probe.parameters_mut().nth(i).unwrap();
        *probe.parameters_mut().nth(i).unwrap() = original + FD_STEP;
        let up = probe.mean_loss(inputs, targets, loss)?;
        *probe.parameters_mut().nth(i).unwrap() = original - FD_STEP;
        let down = probe.mean_loss(inputs, targets, loss)?;
        *probe.parameters_mut().nth(i).unwrap() = original;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn gradient_check_bce() {
        let mut rng = seeded(1);
        let mut m = MlpModel::new(&[2, 4, 1], OutputHead::SigmoidLogit, 1).unwrap();
        m.randomize(&mut rng, 1.0);
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>()]).collect();
        let y: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 2) as f64]).collect();
        assert!(gradient_check(&m, Loss::BinaryCrossEntropy, &x, &y).unwrap() < 1e-4);
    }

    #[test]
    fn gradient_check_stationary_point() {
        let mut m = MlpModel::zeros(&[1, 1], OutputHead::Linear).unwrap();
        m.layers[0].weights[0] = 2.0;
        m.layers[0].biases[0] = 1.0;
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y: Vec<Vec<f64>> = x.iter().map(|v| vec![2.0 * v[0] + 1.0]).collect();
        let (loss, grads) = m.loss_and_gradient(&x, &y, Loss::MeanSquaredError).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flatten().iter().all(|g| g.abs() < 1e-12));
        assert!(gradient_check(&m, Loss::MeanSquaredError, &x, &y).unwrap() < 1e-4);
    }

    #[test]
    fn gradient_check_pinball_off_kink() {
        let mut rng = seeded(2);
        let mut m = MlpModel::new(&[3, 4, 1], OutputHead::Linear, 2).unwrap();
        m.randomize(&mut rng, 0.8);
        let x: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let pred = m.predict(&x).unwrap();
        // keep every residual far from zero
        let y: Vec<Vec<f64>> = pred
            .iter()
            .enumerate()
            .map(|(i, p)| vec![p + if i % 2 == 0 { 0.5 } else { -0.5 }])
            .collect();
        assert!(gradient_check(&m, Loss::Pinball(0.95), &x, &y).unwrap() < 1e-4);
    }

    fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as f64;
            let c = if label == 1.0 { 2.0 } else { -2.0 };
            x.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
            y.push(vec![label]);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs() {
        let (x, y) = blobs(3, 400);
        let m = MlpModel::new(&default_layers(2), OutputHead::SigmoidLogit, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::new(Loss::BinaryCrossEntropy, 5)
        };
        let trained = train(m, &x, &y, &cfg).unwrap();
        let p = trained.model.predict(&x).unwrap();
        let acc = p.iter().zip(&y).filter(|(p, y)| (**p > 0.5) == (y[0] == 1.0)).count() as f64 / x.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
        assert_eq!(trained.loss_trace.len(), 20);

        let again = train(MlpModel::new(&default_layers(2), OutputHead::SigmoidLogit, 4).unwrap(), &x, &y, &cfg).unwrap();
        assert_eq!(again.model, trained.model);
    }

    #[test]
    fn constant_target_mse() {
        let mut rng = seeded(6);
        let x: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y = vec![vec![0.7]; 200];
        let m = MlpModel::new(&[4, 8, 1], OutputHead::Linear, 7).unwrap();
        let trained = train(m, &x, &y, &TrainConfig::new(Loss::MeanSquaredError, 8)).unwrap();
        assert!(*trained.loss_trace.last().unwrap() < 1e-3);
    }

    #[test]
    fn pinball_learns_quantile() {
        let mut rng = seeded(9);
        let dist = Normal::new(2.0, 1.0).unwrap();
        let n = 2000;
        let x = vec![vec![1.0]; n];
        let targets: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let y: Vec<Vec<f64>> = targets.iter().map(|t| vec![*t]).collect();
        let mut sorted = targets.clone();
        sorted.sort_by(f64::total_cmp);
        let q95 = crate::kernels::linear_quantile(&sorted, 0.95);

        let m = MlpModel::new(&[1, 8, 1], OutputHead::Linear, 10).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 60,
            ..TrainConfig::new(Loss::Pinball(0.95), 11)
        };
        let trained = train(m, &x, &y, &cfg).unwrap();
        let pred = trained.model.predict(&x[..1]).unwrap()[0];
        assert!((pred - q95).abs() < 0.1, "pred {pred} vs q95 {q95}");
    }

    #[test]
    fn full_batch_mse_is_non_increasing() {
        let mut rng = seeded(12);
        let x: Vec<Vec<f64>> = (0..64).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0] - 2.0 * v[1] + 0.5 * v[2]]).collect();
        let m = MlpModel::new(&[3, 8, 1], OutputHead::Linear, 13).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 100,
            momentum: 0.0,
            ..TrainConfig::new(Loss::MeanSquaredError, 14)
        };
        let trained = train(m, &x, &y, &cfg).unwrap();
        for w in trained.loss_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let m = MlpModel::new(&[1, 1], OutputHead::Linear, 0).unwrap();
        let x = vec![vec![0.0]; 4];
        let y = vec![vec![0.0]; 4];
        let mut cfg = TrainConfig::new(Loss::MeanSquaredError, 0);
        cfg.batch_size = 5;
        assert!(train(m.clone(), &x, &y, &cfg).is_err());
        cfg.batch_size = 2;
        cfg.loss = Loss::Pinball(1.0);
        assert!(train(m, &x, &y, &cfg).is_err());
    }

    #[test]
    fn diverging_training_reports_non_finite() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 100.0]).collect();
        let y: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 1e6]).collect();
        let m = MlpModel::new(&[1, 1], OutputHead::Linear, 0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 10.0,
            batch_size: 8,
            standardize: false,
            ..TrainConfig::new(Loss::MeanSquaredError, 0)
        };
        assert!(matches!(train(m, &x, &y, &cfg), Err(crate::Error::NonFiniteLoss { .. })));
    }
}
