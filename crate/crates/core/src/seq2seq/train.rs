use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, TensorError};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::seq2seq::forward::{evaluate, loss_and_gradients, EncodedPair, EvalStats};
use crate::seq2seq::params::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip: Option<f64>,
    /// Held-out evaluations without improvement before stopping.
    pub patience: Option<usize>,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            steps: 3000,
            batch: 16,
            seed: 1,
            clip: Some(5.0),
            patience: Some(10),
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.into()));
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return bad("learning rate must be a non-negative number");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive");
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad("clip must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean training loss over the steps since the previous point.
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub steps_run: usize,
    /// Step whose weights were kept (best held-out loss).
    pub best_step: usize,
    pub stopped_early: bool,
    pub heldout: Option<HeldoutSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutSummary {
    pub loss: f64,
    pub correct: usize,
    pub tokens: usize,
    pub accuracy: f64,
}

impl From<EvalStats> for HeldoutSummary {
    fn from(s: EvalStats) -> Self {
        Self {
            loss: s.loss,
            correct: s.correct,
            tokens: s.tokens,
            accuracy: s.accuracy(),
        }
    }
}

const EVAL_CHUNK: usize = 64;
const SHUFFLE_STREAM: u64 = 0x005e_ed0f_5417_u64;

/// Teacher-forced training with Adam, optional clipping and early stopping on
/// held-out loss. On return `params` hold the best weights seen.
pub fn train(
    params: &mut ModelParams,
    train: &[EncodedPair],
    heldout: &[EncodedPair],
    config: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::Config("training corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut adam = AdamState::new(params.store(), config.adam);

    let mut curve = Vec::new();
    let mut interval_loss = 0.0;
    let mut interval_steps = 0;
    let mut best: Option<(f64, usize, crate::autodiff::ParamStore)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut steps_run = 0;

    for step in 1..=config.steps {
        let mut indices = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            indices.push(order[cursor]);
            cursor += 1;
        }
        let batch: Vec<&EncodedPair> = indices.iter().map(|&i| &train[i]).collect();

        params.store_mut().zero_grads();
        let non_finite = |params: &ModelParams| ModelError::NonFiniteLoss {
            step,
            batch: indices.clone(),
            grad_norm: params.store().grad_norm(),
        };
        let loss = match loss_and_gradients(params, &batch) {
            Ok(l) if l.is_finite() => l,
            Ok(_) | Err(ModelError::Tensor(TensorError::NonFinite { .. })) => {
                return Err(non_finite(params))
            }
            Err(e) => return Err(e),
        };
        let norm = match config.clip {
            Some(c) => params.store_mut().clip_grad_norm(c),
            None => params.store().grad_norm(),
        };
        if !norm.is_finite() {
            return Err(non_finite(params));
        }
        adam_step(params.store_mut(), &mut adam)?;
        if !params.all_finite() {
            return Err(non_finite(params));
        }
        steps_run = step;
        interval_loss += loss;
        interval_steps += 1;

        if step % config.eval_every == 0 || step == config.steps {
            let mut point = CurvePoint {
                step,
                train_loss: interval_loss / interval_steps as f64,
                heldout_loss: None,
                heldout_accuracy: None,
            };
            interval_loss = 0.0;
            interval_steps = 0;
            if !heldout.is_empty() {
                let stats = evaluate(params, heldout, EVAL_CHUNK)?;
                point.heldout_loss = Some(stats.loss);
                point.heldout_accuracy = Some(stats.accuracy());
                if best.as_ref().is_none_or(|(l, _, _)| stats.loss < *l) {
                    best = Some((stats.loss, step, params.store().clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            curve.push(point);
            if config.patience.is_some_and(|p| since_best >= p) {
                stopped_early = true;
                break;
            }
        }
    }

    let mut best_step = steps_run;
    if let Some((_, step, store)) = best {
        *params.store_mut() = store;
        best_step = step;
    }
    params.store_mut().clear_grads();
    let heldout = if heldout.is_empty() {
        None
    } else {
        Some(evaluate(params, heldout, EVAL_CHUNK)?.into())
    };
    Ok(TrainReport {
        curve,
        steps_run,
        best_step,
        stopped_early,
        heldout,
    })
}
