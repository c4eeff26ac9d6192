//! Supervised next-token pretraining on gold worked solutions (produces π₀).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::optim::{clip_grad_norm, learning_rate, AdamW, AdamWConfig, Schedule};
use super::sampling::Policy;
use super::scalar::Scalar;
use super::transformer::{PackedBatch, Transformer};
use crate::corpus::{training_sequence, ProblemInstance, TokenId, Tokenizer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Validation accuracy is measured every this many steps (0 disables).
    pub eval_every: usize,
    /// Stop as soon as greedy validation accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
    pub eval_max_new_tokens: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 32,
            learning_rate: 1e-3,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
            eval_every: 0,
            stop_at_accuracy: None,
            eval_max_new_tokens: 96,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainStep {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub initial_loss: f64,
    pub epoch_mean_losses: Vec<f64>,
    pub final_validation_accuracy: Option<f64>,
    pub stopped_early: bool,
}

/// Mean cross-entropy of solution tokens (and EOS) over `problems`.
pub fn solution_loss<T: Scalar>(model: &Transformer<T>, problems: &[ProblemInstance]) -> Result<f64> {
    let tok = Tokenizer::new();
    let mut batch = PackedBatch::default();
    for p in problems {
        let (seq, prompt_len) = training_sequence(&tok, p)?;
        batch.push(&seq, prompt_len);
    }
    let fwd = model.forward(&batch)?;
    Ok(-fwd.logprobs.iter().sum::<f64>() / fwd.logprobs.len() as f64)
}

pub fn pretrain<T: Scalar>(
    train: &[ProblemInstance],
    validation: &[ProblemInstance],
    model_config: &ModelConfig,
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(&PretrainStep),
) -> Result<(Checkpoint, PretrainReport)> {
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training corpus".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let tok = Tokenizer::new();
    let ckpt0 = Checkpoint::init(model_config, &tok)?;
    let mut model: Transformer<T> = ckpt0.model()?;
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        model.layout(),
    );
    let sequences: Vec<(Vec<TokenId>, usize)> = train
        .iter()
        .map(|p| training_sequence(&tok, p))
        .collect::<Result<_>>()?;
    let steps_per_epoch = sequences.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut report = PretrainReport {
        steps: 0,
        initial_loss: f64::NAN,
        epoch_mean_losses: Vec::new(),
        final_validation_accuracy: None,
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut crate::rng::stream(cfg.seed, &[epoch as u64]));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = PackedBatch::default();
            for &i in chunk {
                let (seq, prompt_len) = &sequences[i];
                batch.push(seq, *prompt_len);
            }
            let fwd = model.forward(&batch)?;
            let n = fwd.logprobs.len() as f64;
            let loss = -fwd.logprobs.iter().sum::<f64>() / n;
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { step });
            }
            if step == 0 {
                report.initial_loss = loss;
            }
            let coeffs = vec![-1.0 / n; fwd.logprobs.len()];
            let mut grads = model.backward(&batch, &fwd, &coeffs);
            clip_grad_norm(&mut grads, cfg.grad_clip);
            let lr = learning_rate(Schedule::Cosine, cfg.learning_rate, cfg.warmup_ratio, step, total_steps);
            opt.step(model.params_mut(), &grads, lr);
            loss_sum += loss;
            step += 1;

            let mut validation_accuracy = None;
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !validation.is_empty() {
                let policy = Policy {
                    model: model.clone(),
                    id: format!("pretrain-step-{step}"),
                };
                let acc = crate::eval::evaluate_accuracy(&policy, validation, cfg.eval_max_new_tokens)?.accuracy;
                validation_accuracy = Some(acc);
                report.final_validation_accuracy = Some(acc);
            }
            on_step(&PretrainStep {
                step,
                epoch,
                loss,
                lr,
                validation_accuracy,
            });
            if let (Some(acc), Some(target)) = (validation_accuracy, cfg.stop_at_accuracy) {
                if acc >= target {
                    report.stopped_early = true;
                    report.epoch_mean_losses.push(loss_sum / chunk_count(step, steps_per_epoch));
                    break 'epochs;
                }
            }
        }
        report.epoch_mean_losses.push(loss_sum / steps_per_epoch as f64);
    }
    report.steps = step;

    let provenance = BTreeMap::from([
        ("stage".to_string(), "pretrain".to_string()),
        ("steps".to_string(), step.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("config".to_string(), serde_json::to_string(cfg)?),
        ("precision".to_string(), T::NAME.to_string()),
    ]);
    Ok((Checkpoint::from_model(&model, &tok.fingerprint(), provenance), report))
}

fn chunk_count(step: usize, steps_per_epoch: usize) -> f64 {
    match step % steps_per_epoch {
        0 => steps_per_epoch as f64,
        r => r as f64,
    }
}
