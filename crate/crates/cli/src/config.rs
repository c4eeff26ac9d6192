//! Flat run configuration: one JSON object, every field optional in the file,
//! overridden by command-line flags.

use std::path::Path;

use cgpo_core::corpus::{CorpusConfig, Op};
use cgpo_core::model::{ConfidenceMode, ModelConfig, PretrainConfig, SamplingConfig};
use cgpo_core::pairs::PairBuilderConfig;
use cgpo_core::reward::RewardConfig;
use cgpo_core::trainer::TrainConfig;
use cgpo_core::{Thresholds, Tokenizer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // corpus
    pub n_train: usize,
    pub n_eval: usize,
    pub operand_lo: i64,
    pub operand_hi: i64,
    pub ops: String,
    pub n_ops_lo: usize,
    pub n_ops_hi: usize,
    pub corpus_seed: u64,
    // model
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub model_seed: u64,
    // pretraining
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,
    pub pretrain_warmup_ratio: f64,
    pub pretrain_weight_decay: f64,
    /// Training problems held out from the end of the train file for early stopping.
    pub pretrain_validation: usize,
    pub pretrain_eval_every: usize,
    pub pretrain_stop_at_accuracy: Option<f64>,
    pub pretrain_seed: u64,
    // sampling
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub confidence_mode: ConfidenceMode,
    pub sampling_seed: u64,
    // thresholds
    pub q_split: f64,
    pub q_stop: f64,
    /// Prompts used for calibration and pair building (0 = all).
    pub max_prompts: usize,
    // pair building
    pub k: usize,
    pub m: usize,
    pub max_branch_tokens: usize,
    pub min_score_gap: f64,
    pub workers: usize,
    // reward
    pub n_rollouts: usize,
    pub rollout_temperature: f64,
    pub rollout_max_tokens: usize,
    // preference training
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub train_seed: u64,
    // evaluation
    pub eval_max_new_tokens: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        let model = ModelConfig::default();
        let pre = PretrainConfig::default();
        let sampling = SamplingConfig::default();
        let reward = RewardConfig::default();
        let train = TrainConfig::default();
        Self {
            n_train: corpus.n_train,
            n_eval: corpus.n_eval,
            operand_lo: corpus.operand_range[0],
            operand_hi: corpus.operand_range[1],
            ops: corpus.ops.iter().map(|o| o.symbol()).collect(),
            n_ops_lo: corpus.n_ops_range[0],
            n_ops_hi: corpus.n_ops_range[1],
            corpus_seed: corpus.seed,
            n_layers: model.n_layers,
            n_heads: model.n_heads,
            d_model: model.d_model,
            d_ff: model.d_ff,
            context_len: model.context_len,
            model_seed: model.seed,
            pretrain_epochs: pre.epochs,
            pretrain_batch_size: pre.batch_size,
            pretrain_lr: pre.learning_rate,
            pretrain_warmup_ratio: pre.warmup_ratio,
            pretrain_weight_decay: pre.weight_decay,
            pretrain_validation: 500,
            pretrain_eval_every: 200,
            pretrain_stop_at_accuracy: None,
            pretrain_seed: pre.seed,
            temperature: sampling.temperature,
            max_new_tokens: sampling.max_new_tokens,
            confidence_mode: sampling.confidence,
            sampling_seed: sampling.seed,
            q_split: 0.02,
            q_stop: 0.02,
            max_prompts: 0,
            k: 8,
            m: 1,
            max_branch_tokens: 192,
            min_score_gap: 0.0,
            workers: 1,
            n_rollouts: reward.n_rollouts,
            rollout_temperature: reward.rollout_temperature,
            rollout_max_tokens: reward.rollout_max_tokens,
            beta: train.beta,
            lr: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            warmup_ratio: train.warmup_ratio,
            weight_decay: train.weight_decay,
            grad_clip: train.grad_clip,
            train_seed: train.seed,
            eval_max_new_tokens: 96,
        }
    }
}

impl RunConfig {
    /// File contents (or defaults) with `key=value` overrides applied on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, serde_json::Value)]) -> Result<Self, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::json!({}),
        };
        let obj = value
            .as_object_mut()
            .ok_or_else(|| CliError::Config("config must be a JSON object".into()))?;
        for (k, v) in overrides {
            obj.insert(k.clone(), v.clone());
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.corpus()?;
        Ok(cfg)
    }

    /// Short content hash of the whole configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    pub fn corpus(&self) -> Result<CorpusConfig, CliError> {
        let ops = self
            .ops
            .chars()
            .map(|c| Op::from_symbol(c).ok_or_else(|| CliError::Config(format!("unknown operator {c:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = CorpusConfig {
            n_train: self.n_train,
            n_eval: self.n_eval,
            operand_range: [self.operand_lo, self.operand_hi],
            ops,
            n_ops_range: [self.n_ops_lo, self.n_ops_hi],
            seed: self.corpus_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            context_len: self.context_len,
            vocab_size: Tokenizer::new().vocab_size(),
            seed: self.model_seed,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.pretrain_batch_size,
            learning_rate: self.pretrain_lr,
            warmup_ratio: self.pretrain_warmup_ratio,
            weight_decay: self.pretrain_weight_decay,
            grad_clip: 1.0,
            seed: self.pretrain_seed,
            eval_every: self.pretrain_eval_every,
            stop_at_accuracy: self.pretrain_stop_at_accuracy,
            eval_max_new_tokens: self.eval_max_new_tokens,
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            max_new_tokens: self.max_new_tokens,
            seed: self.sampling_seed,
            greedy: false,
            confidence: self.confidence_mode,
        }
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig {
            n_rollouts: self.n_rollouts,
            rollout_temperature: self.rollout_temperature,
            rollout_max_tokens: self.rollout_max_tokens,
            seed: self.sampling_seed,
            greedy: false,
        }
    }

    pub fn pairs(&self, thresholds: Thresholds) -> PairBuilderConfig {
        PairBuilderConfig {
            k: self.k,
            thresholds,
            sampling: self.sampling(),
            samples_per_prompt: self.m,
            max_branch_tokens: self.max_branch_tokens,
            min_score_gap: self.min_score_gap,
            workers: self.workers,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup_ratio: self.warmup_ratio,
            seed: self.train_seed,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            ..TrainConfig::default()
        }
    }
}

/// Parses `key=value`; the value is JSON when it parses as JSON, a string otherwise.
pub fn parse_override(s: &str) -> Result<(String, serde_json::Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_encode_the_reference_run() {
        let c = RunConfig::default();
        assert_eq!((c.k, c.q_split, c.q_stop), (8, 0.02, 0.02));
        assert_eq!((c.beta, c.lr, c.batch_size, c.epochs, c.warmup_ratio), (0.4, 5e-7, 128, 4, 0.1));
    }

    #[test]
    fn overrides_win_and_unknown_keys_fail() {
        let c = RunConfig::load(None, &[parse_override("beta=0.3").unwrap()]).unwrap();
        assert_eq!(c.beta, 0.3);
        assert!(matches!(
            RunConfig::load(None, &[parse_override("betta=0.3").unwrap()]),
            Err(CliError::Config(_))
        ));
        assert_ne!(c.hash(), RunConfig::default().hash());
    }
}
