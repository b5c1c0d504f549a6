//! Pair-at-a-time SGD training with a log-space learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::TrackModel;
use crate::rng;
use crate::synth::{sample_training_pair, AnnotatedSequence};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            pairs_per_epoch: 200,
            lr_start: 1e-3,
            lr_end: 1e-6,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("train config", "epochs must be >= 1"));
        }
        if self.pairs_per_epoch == 0 {
            return Err(Error::invalid("train config", "pairs_per_epoch must be >= 1"));
        }
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(Error::invalid(
                "train config",
                "need lr_start >= lr_end > 0",
            ));
        }
        Ok(())
    }
}

/// Geometric interpolation from `lr_start` at epoch 0 to `lr_end` at the
/// final epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::invalid(
            "epoch",
            format!("{epoch} outside 0..{}", config.epochs),
        ));
    }
    if config.epochs == 1 {
        return Ok(config.lr_start);
    }
    let t = epoch as f64 / (config.epochs - 1) as f64;
    Ok(config.lr_start * (config.lr_end / config.lr_start).powf(t))
}

/// Plain SGD: `p <- p - lr * g` using each tensor's populated gradient.
/// Tensors without a gradient are left untouched.
pub fn sgd_step(params: &mut BTreeMap<String, Tensor>, lr: f64) {
    for tensor in params.values_mut() {
        if let Some(grad) = tensor.grad() {
            let grad = grad.to_vec();
            for (p, g) in tensor.data_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
    }
}

/// Runs the full schedule, mutating the model in place. Returns the
/// per-epoch mean total loss.
pub fn train(
    model: &mut TrackModel,
    dataset: &[AnnotatedSequence],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("train dataset", "no sequences"));
    }
    let geometry = model.geometry()?;
    let mut r = rng::seeded(config.seed);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config)?;
        let mut epoch_loss = 0.0;
        for pair_idx in 0..config.pairs_per_epoch {
            let seq = &dataset[rng::index(&mut r, dataset.len())];
            let (exemplar, instance, targets) = sample_training_pair(seq, &mut r, &geometry)?;
            let (mut graph, loss, named) =
                model.loss_graph(&exemplar, &instance, &targets, &config.weights)?;
            let loss_value = graph.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("total loss at epoch {epoch}, pair {pair_idx}"),
                });
            }
            graph.backward(loss)?;
            for (name, var) in &named {
                if let Some(g) = graph.grad(*var) {
                    model
                        .params
                        .get_mut(name)
                        .expect("parameter exists")
                        .set_grad(g.to_vec())?;
                }
            }
            sgd_step(&mut model.params, lr);
            epoch_loss += loss_value;
        }
        history.push(epoch_loss / config.pairs_per_epoch as f64);
    }
    Ok(history)
}

/// Loss history in `epoch,mean_loss` CSV form.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, loss) in history.iter().enumerate() {
        s.push_str(&format!("{i},{loss}\n"));
    }
    s
}
