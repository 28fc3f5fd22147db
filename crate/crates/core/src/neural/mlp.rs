use std::fs::File;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::Loss;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputHead {
    /// Logit output squashed to a probability.
    SigmoidLogit,
    Linear,
}

/// Dense layer with row-major `out x in` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Layer {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.biases[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward network: ReLU hidden layers, linear last layer, then head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub head: OutputHead,
    /// Per-input standardization applied before the first layer.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parameter gradients laid out like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub(crate) fn zeros_like(model: &MlpModel) -> Gradients {
        Gradients {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Scratch buffers reused across samples.
pub(crate) struct Workspace {
    /// Post-activation values per layer; `acts[0]` is the standardized input.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl MlpModel {
    /// He-initialized network with identity standardization.
    pub fn new(layer_sizes: &[usize], head: OutputHead, seed: u64) -> Result<MlpModel> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad layer sizes {layer_sizes:?}")));
        }
        let mut rng = seeded(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let scale = (2.0 / w[0] as f64).sqrt();
                for v in &mut layer.weights {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * scale;
                }
                layer
            })
            .collect();
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            head,
            input_mean: vec![0.0; layer_sizes[0]],
            input_std: vec![1.0; layer_sizes[0]],
        })
    }

    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize], head: OutputHead) -> Result<MlpModel> {
        let mut m = MlpModel::new(layer_sizes, head, 0)?;
        for l in &mut m.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Sets standardization constants from training inputs; zero-spread
    /// columns keep unit scale.
    pub fn fit_standardization<R: AsRef<[f64]>>(&mut self, inputs: &[R]) {
        let d = self.input_dim();
        let n = inputs.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in inputs {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in inputs {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        self.input_std = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        self.input_mean = mean;
    }

    fn check_inputs<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<()> {
        if let Some(bad) = inputs.iter().map(|r| r.as_ref().len()).find(|&d| d != self.input_dim()) {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: bad,
            });
        }
        Ok(())
    }

    pub(crate) fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.layer_sizes.iter().map(|&s| Vec::with_capacity(s)).collect(),
            delta: Vec::new(),
            next_delta: Vec::new(),
        }
    }

    /// Forward pass leaving pre-head outputs in `ws.acts.last()`.
    pub(crate) fn forward_raw(&self, x: &[f64], ws: &mut Workspace) {
        let input = &mut ws.acts[0];
        input.clear();
        input.extend(x.iter().zip(&self.input_mean).zip(&self.input_std).map(|((v, m), s)| (v - m) / s));
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(i + 1);
            let out = &mut after[0];
            layer.apply(&before[i], out);
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    fn apply_head(&self, z: f64) -> f64 {
        match self.head {
            OutputHead::SigmoidLogit => sigmoid(z),
            OutputHead::Linear => z,
        }
    }

    /// Head outputs, one row per input row.
    pub fn forward<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(inputs)?;
        let mut ws = self.workspace();
        Ok(inputs
            .iter()
            .map(|x| {
                self.forward_raw(x.as_ref(), &mut ws);
                ws.acts.last().unwrap().iter().map(|&z| self.apply_head(z)).collect()
            })
            .collect())
    }

    /// First pre-head output of every row. For a sigmoid head this ranks rows
    /// like [`predict`](Self::predict) without saturating at 1.0.
    pub fn logits<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        let mut ws = self.workspace();
        Ok(inputs
            .iter()
            .map(|x| {
                self.forward_raw(x.as_ref(), &mut ws);
                ws.acts.last().unwrap()[0]
            })
            .collect())
    }

    /// First output of every row.
    pub fn predict<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<Vec<f64>> {
        Ok(self.forward(inputs)?.into_iter().map(|r| r[0]).collect())
    }

    /// Accumulates the gradient of one sample's loss into `grads`; returns
    /// that sample's loss.
    pub(crate) fn backprop(&self, x: &[f64], target: &[f64], loss: Loss, ws: &mut Workspace, grads: &mut Gradients) -> f64 {
        self.forward_raw(x, ws);
        let raw = ws.acts.last().unwrap();
        ws.delta.clear();
        let mut total = 0.0;
        for (&z, &y) in raw.iter().zip(target) {
            let (l, dz) = loss.value_and_grad(z, y, self.head);
            total += l;
            ws.delta.push(dz);
        }
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &ws.acts[i];
            let gw = &mut grads.weights[i];
            let gb = &mut grads.biases[i];
            for (o, &d) in ws.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if i == 0 {
                break;
            }
            ws.next_delta.clear();
            ws.next_delta.resize(layer.inputs, 0.0);
            for (o, &d) in ws.delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (nd, w) in ws.next_delta.iter_mut().zip(row) {
                    *nd += d * w;
                }
            }
            // ReLU derivative on the hidden activations feeding this layer
            for (nd, a) in ws.next_delta.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *nd = 0.0;
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.next_delta);
        }
        total
    }

    /// Mean loss and its gradient over a full data set.
    pub fn loss_and_gradient<R: AsRef<[f64]>, T: AsRef<[f64]>>(&self, inputs: &[R], targets: &[T], loss: Loss) -> Result<(f64, Gradients)> {
        self.check_inputs(inputs)?;
        let mut ws = self.workspace();
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            total += self.backprop(x.as_ref(), y.as_ref(), loss, &mut ws, &mut grads);
        }
        let n = inputs.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    pub fn mean_loss<R: AsRef<[f64]>, T: AsRef<[f64]>>(&self, inputs: &[R], targets: &[T], loss: Loss) -> Result<f64> {
        self.check_inputs(inputs)?;
        let mut ws = self.workspace();
        let mut total = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            self.forward_raw(x.as_ref(), &mut ws);
            for (&z, &t) in ws.acts.last().unwrap().iter().zip(y.as_ref()) {
                total += loss.value_and_grad(z, t, self.head).0;
            }
        }
        Ok(total / inputs.len() as f64)
    }

    pub(crate) fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MlpModel> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Randomizes all parameters with the given scale; used by tests.
    pub fn randomize(&mut self, rng: &mut impl Rng, scale: f64) {
        for p in self.parameters_mut() {
            *p = (rng.random::<f64>() * 2.0 - 1.0) * scale;
        }
    }
}
