use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InputNorm, Model};
use crate::dataset::WindowSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer sized for {} parameters, got {} / {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub seed: u64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: 10,
            seed: 0,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: usize,
}

pub fn train(model: Model, train: &[WindowSample], val: &[WindowSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(model, train, val, cfg, &mut |_| {})
}

/// Mini-batch Adam with shuffling and early stopping. When `val` is empty
/// the training loss drives model selection.
pub fn train_with_progress(
    mut model: Model,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("bad training config {cfg:?}")));
    }
    if model.config().standardize_inputs && model.input_norm.is_none() {
        model.input_norm = Some(InputNorm::fit(train));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.n_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, Model, usize)> = None;
    let mut stale = 0;
    let mut steps = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&batch, true)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            adam.step(&mut model.params, &grads)?;
            sum += loss * batch.len() as f64;
            seen += batch.len();
            steps += 1;
        }
        if seen == 0 {
            break;
        }
        let train_loss = sum / seen as f64;
        let val_loss = if val.is_empty() { train_loss } else { model.eval_loss(val)? };
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        progress(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, model.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break 'epochs;
            }
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    let (_, model, best_epoch) = best.ok_or_else(|| Error::InvalidArgument("no epochs were run".into()))?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        steps,
    })
}

/// Full-batch Adam on a fixed set; returns the loss before every step.
pub fn overfit(model: &mut Model, samples: &[WindowSample], steps: usize, lr: f64) -> Result<Vec<f64>> {
    let batch: Vec<&WindowSample> = samples.iter().collect();
    let mut adam = AdamState::new(model.n_params(), lr);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grads) = model.loss_and_gradients(&batch, true)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: step, loss });
        }
        losses.push(loss);
        adam.step(&mut model.params, &grads)?;
    }
    Ok(losses)
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        text.push_str(&format!("{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.val_loss));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
