//! Class-weighted cross-entropy training with decoupled weight decay.

use std::borrow::Borrow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::softmax;
use super::network::{backward, check_visual, forward, Example, Mode};
use super::params::{Gradients, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Fraction of every parameter removed per step, independent of the
    /// learning rate.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Loss weight per class, indexed like the logits.
    pub class_weights: [f64; 2],
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-6,
            weight_decay: 5e-4,
            batch_size: 64,
            class_weights: [1.0, 1.0],
            epochs: 30,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero learning rate is accepted as a decay-only step.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(Error::invalid("weight_decay must be in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.class_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("class weights must be positive"));
        }
        Ok(())
    }
}

/// `w_c = N / (2 * N_c)` from per-class training counts `[benign, malicious]`.
pub fn class_weights_from_counts(counts: [usize; 2]) -> Result<[f64; 2]> {
    if counts.contains(&0) {
        return Err(Error::invalid(format!("both classes need examples, got {counts:?}")));
    }
    let n = (counts[0] + counts[1]) as f64;
    Ok([n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64)])
}

/// Mean over the batch of `w_y * -ln p_y`.
pub fn compute_loss(logits: &[[f64; 2]], labels: &[usize], class_weights: [f64; 2]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if logits.len() != labels.len() {
        return Err(Error::invalid("logits and labels differ in length"));
    }
    let mut total = 0.0;
    for (l, &y) in logits.iter().zip(labels) {
        if y > 1 {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        total += class_weights[y] * nll(l, y);
    }
    Ok(total / logits.len() as f64)
}

/// `-ln softmax(l)[y]` via log-sum-exp.
fn nll(l: &[f64], y: usize) -> f64 {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - l[y]
}

pub(crate) fn weighted_loss_grad(logits: &[f64], y: usize, weight: f64, batch: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let scale = weight / batch as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| scale * (pc - if c == y { 1.0 } else { 0.0 }))
        .collect();
    (weight * nll(logits, y), d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub step: u64,
    pub epoch: usize,
    adam: Option<(Gradients, Gradients)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub examples: usize,
    pub seconds: f64,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            step: 0,
            epoch: 0,
            adam: None,
        }
    }

    /// Loss and accumulated gradients for one batch, without updating.
    pub fn batch_gradients<E: Borrow<Example>>(
        &self,
        batch: &[E],
        config: &TrainConfig,
        mode_seed: Option<u64>,
    ) -> Result<(f64, Gradients)> {
        let mut grads = Gradients::zeros_like(&self.params);
        let mut loss = 0.0;
        for (i, ex) in batch.iter().enumerate() {
            let ex = ex.borrow();
            check_visual(&self.params, &ex.visual)?;
            if ex.label > 1 {
                return Err(Error::invalid(format!("label {} out of range", ex.label)));
            }
            let mode = match mode_seed {
                Some(s) => Mode::Train {
                    seed: s ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                },
                None => Mode::Eval,
            };
            let cache = forward(&self.params, ex.visual.to_f64(), &ex.tokens, mode);
            let (l, dl) =
                weighted_loss_grad(&cache.logits, ex.label, config.class_weights[ex.label], batch.len());
            loss += l;
            backward(&self.params, &cache, &dl, &mut grads, false);
        }
        Ok((loss / batch.len() as f64, grads))
    }

    /// One optimizer step on `batch`; returns the batch loss before the update.
    pub fn train_step<E: Borrow<Example>>(&mut self, batch: &[E], config: &TrainConfig) -> Result<f64> {
        config.validate()?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let seed = step_seed(config.seed, self.step);
        let (loss, grads) = self.batch_gradients(batch, config, Some(seed))?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite loss {loss} at step {}",
                self.step
            )));
        }
        self.apply(&grads, config);
        self.step += 1;
        Ok(loss)
    }

    fn apply(&mut self, grads: &Gradients, config: &TrainConfig) {
        let lr = config.learning_rate;
        let keep = 1.0 - config.weight_decay;
        match config.optimizer {
            OptimizerKind::Sgd => {
                for (t, g) in self.params.tensors.iter_mut().zip(&grads.tensors) {
                    for (p, &gi) in t.data.iter_mut().zip(g) {
                        *p = keep * *p - lr * gi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (m, v) = self.adam.get_or_insert_with(|| {
                    (Gradients::zeros_like(&self.params), Gradients::zeros_like(&self.params))
                });
                let t = (self.step + 1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((tensor, g), mt), vt) in self
                    .params
                    .tensors
                    .iter_mut()
                    .zip(&grads.tensors)
                    .zip(m.tensors.iter_mut())
                    .zip(v.tensors.iter_mut())
                {
                    for (((p, &gi), mi), vi) in tensor.data.iter_mut().zip(g).zip(mt).zip(vt) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let update = (*mi / c1) / ((*vi / c2).sqrt() + eps);
                        *p = keep * *p - lr * update;
                    }
                }
            }
        }
    }
}

fn step_seed(seed: u64, step: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0xD134_2543_DE82_EF95)).gen()
}

/// One pass over `dataset` in a seed-determined order.
pub fn train_epoch<E: Borrow<Example>>(
    state: &mut TrainState,
    dataset: &[E],
    config: &TrainConfig,
) -> Result<EpochStats> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(state.epoch as u64));
    order.shuffle(&mut rng);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(config.batch_size) {
        let batch: Vec<&Example> = chunk.iter().map(|&i| dataset[i].borrow()).collect();
        total += state.train_step(&batch, config)? * batch.len() as f64;
        batches += 1;
    }
    let stats = EpochStats {
        epoch: state.epoch,
        mean_loss: total / dataset.len() as f64,
        batches,
        examples: dataset.len(),
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "epoch {} loss {:.5} ({} batches, {:.1}s)",
        stats.epoch,
        stats.mean_loss,
        stats.batches,
        stats.seconds
    );
    state.epoch += 1;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_weights_example() {
        assert_eq!(class_weights_from_counts([100, 20]).unwrap(), [0.6, 3.0]);
        assert!(class_weights_from_counts([5, 0]).is_err());
    }

    #[test]
    fn loss_matches_hand_computation() {
        // Sample 1: logits (0, ln 3) -> p1 = 3/4, label 1 -> -ln(3/4).
        // Sample 2: logits (0, 0) -> p0 = 1/2, label 0 -> ln 2.
        let logits = [[0.0, 3f64.ln()], [0.0, 0.0]];
        let expected = ((4.0f64 / 3.0).ln() + 2f64.ln()) / 2.0;
        let got = compute_loss(&logits, &[1, 0], [1.0, 1.0]).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn weighted_loss_scales_per_class() {
        let logits = [[0.0, 0.0], [0.0, 0.0]];
        let got = compute_loss(&logits, &[0, 1], [0.6, 3.0]).unwrap();
        assert!((got - 1.8 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let l = compute_loss(&[[-50.0, 50.0]], &[1], [1.0, 1.0]).unwrap();
        assert!(l < 1e-40);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(compute_loss(&[], &[], [1.0, 1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            class_weights: [1.0, 0.0],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let neg = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(neg.validate().is_err());
    }
}
