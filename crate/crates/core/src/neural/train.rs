use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::Loss;
use super::mlp::{Gradients, MlpModel};
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const MOMENTUM: f64 = 0.9;

fn default_momentum() -> f64 {
    MOMENTUM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Refit input standardization on the training inputs before training.
    pub standardize: bool,
}

impl TrainConfig {
    pub fn new(loss: Loss, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 50,
            seed,
            momentum: MOMENTUM,
            standardize: true,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if let Loss::Pinball(q) = self.loss {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidConfig(format!("pinball q must lie in (0,1), got {q}")));
            }
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::InvalidConfig(format!("batch_size {} must lie in 1..={n}", self.batch_size)));
        }
        Ok(())
    }
}

/// A trained model with its per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: MlpModel,
    pub loss_trace: Vec<f64>,
}

/// Mini-batch gradient descent with momentum. Batches are drawn from a
/// seeded shuffle each epoch, so results depend only on the inputs and seed.
pub fn train<R, T>(model: MlpModel, inputs: &[R], targets: &[T], config: &TrainConfig) -> Result<Trained>
where
    R: AsRef<[f64]>,
    T: AsRef<[f64]>,
{
    train_with(model, inputs, targets, config, |_, _| {})
}

/// As [`train`], calling `on_epoch(epoch, model)` after every epoch.
pub fn train_with<R, T, F>(mut model: MlpModel, inputs: &[R], targets: &[T], config: &TrainConfig, mut on_epoch: F) -> Result<Trained>
where
    R: AsRef<[f64]>,
    T: AsRef<[f64]>,
    F: FnMut(usize, &MlpModel),
{
    let n = inputs.len();
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: targets.len(),
        });
    }
    config.validate(n)?;
    if let Some(bad) = inputs.iter().map(|r| r.as_ref().len()).find(|&d| d != model.input_dim()) {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            found: bad,
        });
    }
    if let Some(bad) = targets.iter().map(|r| r.as_ref().len()).find(|&d| d != model.output_dim()) {
        return Err(Error::DimensionMismatch {
            expected: model.output_dim(),
            found: bad,
        });
    }
    if config.standardize {
        model.fit_standardization(inputs);
    }

    let mut rng = seeded(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = Gradients::zeros_like(&model);
    let mut ws = model.workspace();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(&model);
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.backprop(inputs[i].as_ref(), targets[i].as_ref(), config.loss, &mut ws, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            epoch_loss += batch_loss;
            let step = config.learning_rate / batch.len() as f64;
            apply_momentum(&mut model, &mut velocity, &grads, step, config.momentum);
        }
        loss_trace.push(epoch_loss / n as f64);
        if !model.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        on_epoch(epoch, &model);
    }
    Ok(Trained { model, loss_trace })
}

fn apply_momentum(model: &mut MlpModel, velocity: &mut Gradients, grads: &Gradients, step: f64, momentum: f64) {
    for (l, layer) in model.layers.iter_mut().enumerate() {
        for ((w, v), g) in layer.weights.iter_mut().zip(velocity.weights[l].iter_mut()).zip(&grads.weights[l]) {
            *v = momentum * *v - step * g;
            *w += *v;
        }
        for ((b, v), g) in layer.biases.iter_mut().zip(velocity.biases[l].iter_mut()).zip(&grads.biases[l]) {
            *v = momentum * *v - step * g;
            *b += *v;
        }
    }
}
