//! Central finite-difference verification of the hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{check_visual, forward, Example, Mode};
use super::params::ModelParams;
use super::train::{weighted_loss_grad, TrainConfig, TrainState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
    /// Only tensors whose name starts with one of these prefixes are
    /// sampled; empty means all.
    pub tensor_prefixes: Vec<String>,
    /// Lower bound on the relative-error denominator. Below it, errors are
    /// effectively absolute and dominated by finite-difference roundoff.
    pub denominator_floor: f64,
    pub class_weights: [f64; 2],
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            step: 1e-5,
            seed: 0,
            tensor_prefixes: Vec::new(),
            denominator_floor: 1e-7,
            class_weights: [1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckedParameter {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: Vec<CheckedParameter>,
    pub tensors_covered: usize,
    /// Samples redrawn because the perturbation flipped a ReLU.
    pub kinks_skipped: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CheckedParameter> {
        self.checked
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn eval_loss(p: &ModelParams, batch: &[Example], weights: [f64; 2]) -> (f64, Vec<u64>) {
    let mut loss = 0.0;
    let mut sigs = Vec::with_capacity(batch.len());
    for ex in batch {
        let cache = forward(p, ex.visual.to_f64(), &ex.tokens, Mode::Eval);
        loss += weighted_loss_grad(&cache.logits, ex.label, weights[ex.label], batch.len()).0;
        sigs.push(cache.relu_signature());
    }
    (loss / batch.len() as f64, sigs)
}

/// Compares analytic and numeric gradients of the mean weighted loss over
/// `batch` (eval mode, so dropout is off) at `cfg.samples` parameters.
///
/// Every selected tensor is sampled at least once. Half of the remaining
/// draws favour entries with a non-zero analytic gradient so sparse tensors
/// such as embeddings are exercised where the batch touches them.
pub fn gradient_check(params: &ModelParams, batch: &[Example], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for ex in batch {
        check_visual(params, &ex.visual)?;
    }
    let train_cfg = TrainConfig {
        class_weights: cfg.class_weights,
        ..TrainConfig::default()
    };
    let state = TrainState::new(params.clone());
    let (_, grads) = state.batch_gradients(batch, &train_cfg, None)?;
    let mut work = state.params;

    let selected: Vec<usize> = (0..work.tensors.len())
        .filter(|&i| {
            cfg.tensor_prefixes.is_empty()
                || cfg.tensor_prefixes.iter().any(|p| work.tensors[i].name.starts_with(p))
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::invalid("no tensors match the requested prefixes"));
    }
    let nonzero: Vec<Vec<usize>> = selected
        .iter()
        .map(|&t| {
            grads.tensors[t]
                .iter()
                .enumerate()
                .filter(|(_, g)| **g != 0.0)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let (_, base_sigs) = eval_loss(&work, batch, cfg.class_weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target = cfg.samples.max(selected.len());
    let mut checked = Vec::with_capacity(target);
    let mut kinks_skipped = 0;
    let mut attempts = 0;
    let max_attempts = target * 20;

    while checked.len() < target {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::invalid(format!(
                "could not find {target} kink-free parameters ({kinks_skipped} skipped)"
            )));
        }
        let slot = if checked.len() < selected.len() {
            checked.len()
        } else {
            rng.gen_range(0..selected.len())
        };
        let t = selected[slot];
        let len = work.tensors[t].data.len();
        let index = if !nonzero[slot].is_empty() && rng.gen_bool(0.5) {
            nonzero[slot][rng.gen_range(0..nonzero[slot].len())]
        } else {
            rng.gen_range(0..len)
        };

        let orig = work.tensors[t].data[index];
        work.tensors[t].data[index] = orig + cfg.step;
        let (lp, sp) = eval_loss(&work, batch, cfg.class_weights);
        work.tensors[t].data[index] = orig - cfg.step;
        let (lm, sm) = eval_loss(&work, batch, cfg.class_weights);
        work.tensors[t].data[index] = orig;
        if sp != base_sigs || sm != base_sigs {
            kinks_skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * cfg.step);
        let analytic = grads.tensors[t][index];
        checked.push(CheckedParameter {
            tensor: work.tensors[t].name.clone(),
            index,
            analytic,
            numeric,
            relative_error: relative_error(analytic, numeric, cfg.denominator_floor),
        });
    }

    let mut names: Vec<&str> = checked.iter().map(|c| c.tensor.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    Ok(GradCheckReport {
        max_relative_error: checked.iter().map(|c| c.relative_error).fold(0.0, f64::max),
        tensors_covered: names.len(),
        checked,
        kinks_skipped,
    })
}
