//! Fixed learning-rate minibatch gradient descent for individual KANs.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{KanGrad, KanNet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One target vector per sample, of the output width.
    Regression(Vec<Vec<f64>>),
    /// One class index per sample; the output width is the class count.
    Classes(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self, loss: LossKind) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = match (&self.targets, loss) {
            (Targets::Regression(t), LossKind::Mse) => t.len(),
            (Targets::Classes(t), LossKind::CrossEntropy) => t.len(),
            _ => {
                return Err(Error::InvalidConfig(
                    "loss kind does not match the target type".into(),
                ))
            }
        };
        if n != self.inputs.len() {
            return Err(Error::SizeMismatch(format!(
                "{} inputs but {n} targets",
                self.inputs.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            epochs: 100,
            lr: 0.01,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured on each minibatch before
    /// its update.
    pub epoch_losses: Vec<f64>,
}

/// Loss and its gradient with respect to the network output.
fn loss_and_grad(out: &[f64], targets: &Targets, i: usize) -> (f64, Vec<f64>) {
    match targets {
        Targets::Regression(t) => {
            let t = &t[i];
            let n = out.len() as f64;
            let mut loss = 0.0;
            let g = out
                .iter()
                .zip(t)
                .map(|(y, t)| {
                    let d = y - t;
                    loss += d * d;
                    2.0 * d / n
                })
                .collect();
            (loss / n, g)
        }
        Targets::Classes(c) => {
            let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = out.iter().map(|y| (y - m).exp()).sum();
            let lse = m + z.ln();
            let g = out
                .iter()
                .enumerate()
                .map(|(j, y)| (y - lse).exp() - if j == c[i] { 1.0 } else { 0.0 })
                .collect();
            (lse - out[c[i]], g)
        }
    }
}

/// Trains `net` in place and returns the per-epoch loss history.
pub fn train_kan<R: Rng + ?Sized>(
    net: &mut KanNet,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    data.validate(cfg.loss)?;
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = KanGrad::zeros_like(net);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.layers.iter_mut().for_each(|g| g.fill(0.0));
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut loss = 0.0;
                net.accumulate_grad_with(
                    &data.inputs[i],
                    |out| {
                        let (l, mut g) = loss_and_grad(out, &data.targets, i);
                        loss = l;
                        g.iter_mut().for_each(|v| *v *= scale);
                        g
                    },
                    &mut grad,
                )?;
                total += loss;
            }
            for (layer, g) in net.layers_mut().iter_mut().zip(&grad.layers) {
                for (p, gv) in layer.params_mut().iter_mut().zip(g) {
                    *p -= cfg.lr * gv;
                }
            }
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(TrainReport { epoch_losses })
}

/// Mean loss over a dataset.
pub fn dataset_loss(net: &KanNet, data: &Dataset, loss: LossKind) -> Result<f64> {
    data.validate(loss)?;
    let mut total = 0.0;
    for (i, x) in data.inputs.iter().enumerate() {
        let out = net.forward(x)?;
        total += loss_and_grad(&out, &data.targets, i).0;
    }
    Ok(total / data.len() as f64)
}

/// Fraction of samples whose arg-max output equals the label.
pub fn classification_accuracy(net: &KanNet, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0usize;
    for (x, &c) in inputs.iter().zip(labels) {
        let out = net.forward(x)?;
        let mut best = 0;
        for j in 1..out.len() {
            if out[j] > out[best] {
                best = j;
            }
        }
        hits += (best == c) as usize;
    }
    Ok(hits as f64 / inputs.len() as f64)
}
