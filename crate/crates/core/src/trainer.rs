//! Preference training over triplets against a frozen reference model.
//!
//! Per triplet, `Δθ = log πθ(s⁺ | x, s_init) − log πθ(s⁻ | x, s_init)` with raw
//! (unnormalized) token log-probability sums, `Δref` likewise under the
//! reference, and the loss is the batch mean of `−log σ(β(Δθ − Δref))`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    clip_grad_norm, learning_rate, AdamW, AdamWConfig, Checkpoint, PackedBatch, Scalar, Schedule,
    Transformer,
};
use crate::pairs::PreferenceTriplet;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub weight_decay: f64,
    /// Global gradient-norm clip (0 disables).
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.4,
            learning_rate: 5e-7,
            epochs: 4,
            batch_size: 128,
            warmup_ratio: 0.1,
            schedule: Schedule::Cosine,
            seed: 0,
            weight_decay: 0.0,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    /// The alternative β preset used for some base models.
    pub const BETA_ALT: f64 = 0.3;

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidConfig("warmup_ratio must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub loss: f64,
    pub mean_delta_theta: f64,
    pub mean_delta: f64,
    /// Fraction of triplets with `Δ > 0`.
    pub margin_accuracy: f64,
}

/// One line of the metrics log; statistics are measured before the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub step: usize,
    pub loss: f64,
    pub mean_delta_theta: f64,
    pub mean_delta: f64,
    pub margin_accuracy: f64,
    pub lr: f64,
}

/// `−log σ(z)` without overflow.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Batch statistics and `∂loss/∂Δθ_i` for each triplet.
pub fn objective(delta_theta: &[f64], delta_ref: &[f64], beta: f64) -> (BatchStats, Vec<f64>) {
    assert_eq!(delta_theta.len(), delta_ref.len());
    assert!(!delta_theta.is_empty(), "empty batch");
    let n = delta_theta.len() as f64;
    let mut loss = 0.0;
    let mut sum_delta = 0.0;
    let mut wins = 0usize;
    let mut grads = Vec::with_capacity(delta_theta.len());
    for (&dt, &dr) in delta_theta.iter().zip(delta_ref) {
        let delta = dt - dr;
        loss += neg_log_sigmoid(beta * delta);
        sum_delta += delta;
        wins += usize::from(delta > 0.0);
        grads.push(-beta * sigmoid(-beta * delta) / n);
    }
    let stats = BatchStats {
        loss: loss / n,
        mean_delta_theta: delta_theta.iter().sum::<f64>() / n,
        mean_delta: sum_delta / n,
        margin_accuracy: wins as f64 / n,
    };
    (stats, grads)
}

/// Chosen segments at even target groups, rejected at odd ones.
fn pack(triplets: &[&PreferenceTriplet]) -> Result<(PackedBatch, Vec<std::ops::Range<usize>>)> {
    let mut batch = PackedBatch::default();
    let mut ranges = Vec::with_capacity(2 * triplets.len());
    for t in triplets {
        if t.chosen_tokens.is_empty() || t.rejected_tokens.is_empty() {
            return Err(Error::EmptySegment);
        }
        let context = t.context();
        ranges.push(batch.push_segment(&context, &t.chosen_tokens));
        ranges.push(batch.push_segment(&context, &t.rejected_tokens));
    }
    Ok((batch, ranges))
}

fn deltas_from(logprobs: &[f64], ranges: &[std::ops::Range<usize>]) -> Vec<f64> {
    ranges
        .chunks(2)
        .map(|pair| {
            let chosen: f64 = logprobs[pair[0].clone()].iter().sum();
            let rejected: f64 = logprobs[pair[1].clone()].iter().sum();
            chosen - rejected
        })
        .collect()
}

/// `Δ = log p(s⁺) − log p(s⁻)` for every triplet, evaluated in chunks of
/// `chunk` triplets.
pub fn segment_deltas<T: Scalar>(
    model: &Transformer<T>,
    triplets: &[PreferenceTriplet],
    chunk: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(triplets.len());
    for part in triplets.chunks(chunk.max(1)) {
        let refs: Vec<&PreferenceTriplet> = part.iter().collect();
        let (batch, ranges) = pack(&refs)?;
        let fwd = model.forward(&batch)?;
        out.extend(deltas_from(&fwd.logprobs, &ranges));
    }
    Ok(out)
}

/// Loss and `∂loss/∂θ` of `policy` on `batch`, given the reference deltas.
pub fn loss_and_grad<T: Scalar>(
    policy: &Transformer<T>,
    batch: &[&PreferenceTriplet],
    delta_ref: &[f64],
    beta: f64,
) -> Result<(BatchStats, Vec<T>)> {
    let (packed, ranges) = pack(batch)?;
    let fwd = policy.forward(&packed)?;
    let delta_theta = deltas_from(&fwd.logprobs, &ranges);
    let (stats, d_delta) = objective(&delta_theta, delta_ref, beta);
    let mut target_grads = vec![0.0; fwd.logprobs.len()];
    for (i, g) in d_delta.iter().enumerate() {
        for t in ranges[2 * i].clone() {
            target_grads[t] = *g;
        }
        for t in ranges[2 * i + 1].clone() {
            target_grads[t] = -*g;
        }
    }
    Ok((stats, policy.backward(&packed, &fwd, &target_grads)))
}

fn check_fingerprints(policy: &Checkpoint, reference: &Checkpoint) -> Result<()> {
    if policy.tokenizer_fingerprint != reference.tokenizer_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: reference.tokenizer_fingerprint.clone(),
            found: policy.tokenizer_fingerprint.clone(),
        });
    }
    Ok(())
}

/// Loss of `policy` against `reference` on `batch`, in 64-bit arithmetic.
pub fn cgpo_loss(
    policy: &Checkpoint,
    reference: &Checkpoint,
    batch: &[PreferenceTriplet],
    beta: f64,
) -> Result<BatchStats> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    check_fingerprints(policy, reference)?;
    let pol = policy.model::<f64>()?;
    let refm = reference.model::<f64>()?;
    let delta_theta = segment_deltas(&pol, batch, batch.len())?;
    let delta_ref = segment_deltas(&refm, batch, batch.len())?;
    Ok(objective(&delta_theta, &delta_ref, beta).0)
}

/// Trains a copy of `initial` on `triplets`; the reference stays `initial`.
/// `on_step` receives each metrics-log record.
pub fn train<T: Scalar>(
    initial: &Checkpoint,
    triplets: &[PreferenceTriplet],
    config: &TrainConfig,
    mut on_step: impl FnMut(&TrainStep),
) -> Result<Checkpoint> {
    config.validate()?;
    if triplets.is_empty() {
        return Err(Error::InvalidConfig("empty preference dataset".into()));
    }
    let mut model: Transformer<T> = initial.model()?;
    // Frozen reference: its deltas never change, so compute them once.
    let delta_ref = segment_deltas(&model, triplets, config.batch_size)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        model.layout(),
    );
    let steps_per_epoch = triplets.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(config.seed, &[epoch as u64]));
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreferenceTriplet> = chunk.iter().map(|&i| &triplets[i]).collect();
            let dref: Vec<f64> = chunk.iter().map(|&i| delta_ref[i]).collect();
            let (stats, mut grads) = loss_and_grad(&model, &batch, &dref, config.beta)?;
            if !stats.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergenceDetected { step });
            }
            clip_grad_norm(&mut grads, config.grad_clip);
            let lr = learning_rate(config.schedule, config.learning_rate, config.warmup_ratio, step, total_steps);
            opt.step(model.params_mut(), &grads, lr);
            on_step(&TrainStep {
                step,
                loss: stats.loss,
                mean_delta_theta: stats.mean_delta_theta,
                mean_delta: stats.mean_delta,
                margin_accuracy: stats.margin_accuracy,
                lr,
            });
            step += 1;
        }
    }
    let mut provenance = BTreeMap::from([
        ("stage".to_string(), "train".to_string()),
        ("steps".to_string(), step.to_string()),
        ("seed".to_string(), config.seed.to_string()),
        ("config".to_string(), serde_json::to_string(config)?),
        ("reference_model_id".to_string(), initial.model_id()),
        ("precision".to_string(), T::NAME.to_string()),
    ]);
    if config.epochs == 0 {
        provenance.insert("note".to_string(), "no updates".to_string());
        return Ok(Checkpoint {
            provenance,
            ..initial.clone()
        });
    }
    Ok(Checkpoint::from_model(&model, &initial.tokenizer_fingerprint, provenance))
}

/// Worst relative error between the analytic gradient and central finite
/// differences over `n_probes` randomly chosen parameters. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-6)` so parameters with vanishing gradient do
/// not divide by zero.
pub fn grad_check(
    policy: &Transformer<f64>,
    reference: &Transformer<f64>,
    batch: &[PreferenceTriplet],
    beta: f64,
    n_probes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::InvalidConfig("n_probes must be at least 1".into()));
    }
    let refs: Vec<&PreferenceTriplet> = batch.iter().collect();
    let delta_ref = segment_deltas(reference, batch, batch.len())?;
    let (_, analytic) = loss_and_grad(policy, &refs, &delta_ref, beta)?;
    let loss_at = |model: &Transformer<f64>| -> Result<f64> {
        let dt = segment_deltas(model, batch, batch.len())?;
        Ok(objective(&dt, &delta_ref, beta).0.loss)
    };
    let mut r = rng::stream(seed, &[]);
    let mut probe = policy.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n_probes {
        let i = r.random_range(0..analytic.len());
        let original = probe.params()[i];
        probe.params_mut()[i] = original + epsilon;
        let plus = loss_at(&probe)?;
        probe.params_mut()[i] = original - epsilon;
        let minus = loss_at(&probe)?;
        probe.params_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::corpus::Tokenizer;
    use proptest::prelude::*;

    fn checkpoint(seed: u64) -> Checkpoint {
        Checkpoint::init(&tiny_config(seed), &Tokenizer::new()).unwrap()
    }

    #[test]
    fn identical_models_give_ln2() {
        let c = checkpoint(3);
        let stats = cgpo_loss(&c, &c, &small_batch(), 0.4).unwrap();
        assert!((stats.loss - std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(stats.mean_delta, 0.0);
        assert_eq!(stats.margin_accuracy, 0.0);
    }

    #[test]
    fn scalar_oracle() {
        let (stats, _) = objective(&[2.0], &[0.0], 1.0);
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((stats.loss - expected).abs() < 1e-12);
        assert!((stats.loss - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn larger_beta_lowers_loss_for_positive_margin() {
        let (a, _) = objective(&[0.7, 1.5], &[0.2, -0.3], 0.4);
        let (b, _) = objective(&[0.7, 1.5], &[0.2, -0.3], 0.8);
        assert!(b.loss < a.loss);
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let a = checkpoint(1);
        let mut b = a.clone();
        b.tokenizer_fingerprint = "other".into();
        assert!(matches!(
            cgpo_loss(&a, &b, &small_batch(), 0.4),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let c = checkpoint(2);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train::<f32>(&c, &small_batch(), &cfg, |_| {}).unwrap();
        assert_eq!(out.weights, c.weights);
    }

    #[test]
    fn overfitting_one_batch_raises_delta_theta() {
        let c = checkpoint(4);
        let batch = small_batch();
        let before = segment_deltas(&c.model::<f64>().unwrap(), &batch, 8).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: batch.len(),
            learning_rate: 1e-3,
            warmup_ratio: 0.0,
            ..TrainConfig::default()
        };
        let mut log = Vec::new();
        let out = train::<f32>(&c, &batch, &cfg, |s| log.push(s.clone())).unwrap();
        let after = segment_deltas(&out.model::<f64>().unwrap(), &batch, 8).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&after) > mean(&before), "{} !> {}", mean(&after), mean(&before));
        assert_eq!(log.len(), 3);
        assert!((log[0].loss - std::f64::consts::LN_2).abs() < 1e-4);

        let mut again = Vec::new();
        train::<f32>(&c, &batch, &cfg, |s| again.push(s.clone())).unwrap();
        assert_eq!(log, again);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let policy = checkpoint(5).model::<f64>().unwrap();
        let reference = checkpoint(6).model::<f64>().unwrap();
        let err = grad_check(&policy, &reference, &small_batch(), 0.4, 24, 1e-5, 9).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_scales_with_beta_near_zero() {
        let policy = checkpoint(7).model::<f64>().unwrap();
        let batch = small_batch();
        let refs: Vec<&PreferenceTriplet> = batch.iter().collect();
        let dref = segment_deltas(&checkpoint(8).model::<f64>().unwrap(), &batch, 8).unwrap();
        let (_, g1) = loss_and_grad(&policy, &refs, &dref, 1e-8).unwrap();
        let (_, g2) = loss_and_grad(&policy, &refs, &dref, 2e-8).unwrap();
        let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&g1) > 0.0);
        assert!((norm(&g2) / norm(&g1) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn shared_logit_shift_leaves_delta_unchanged() {
        let model = checkpoint(9).model::<f64>().unwrap();
        let batch = small_batch();
        let before = segment_deltas(&model, &batch, 8).unwrap();
        let mut shifted = model.clone();
        let head_b = shifted.layout().tensor("head.b").unwrap().clone();
        for p in &mut shifted.params_mut()[head_b.offset..head_b.offset + head_b.shape.iter().product::<usize>()] {
            *p += 3.25;
        }
        let after = segment_deltas(&shifted, &batch, 8).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn swapping_segments_flips_the_margin(
            pairs in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..16),
            beta in 0.01f64..2.0,
        ) {
            let dt: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let dr: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            let (swapped, _) = objective(&neg(&dt), &neg(&dr), beta);
            let expected = dt.iter().zip(&dr)
                .map(|(a, b)| neg_log_sigmoid(-beta * (a - b)))
                .sum::<f64>() / dt.len() as f64;
            prop_assert!((swapped.loss - expected).abs() < 1e-12);
        }

        #[test]
        fn analytic_margin_derivative(delta in -30.0f64..30.0, beta in 0.01f64..2.0) {
            let h = 1e-6;
            let f = |d: f64| objective(&[d], &[0.0], beta).0.loss;
            let numeric = (f(delta + h) - f(delta - h)) / (2.0 * h);
            let (_, g) = objective(&[delta], &[0.0], beta);
            prop_assert!((g[0] - numeric).abs() < 1e-6);
            prop_assert!((g[0] + beta * sigmoid(-beta * delta)).abs() < 1e-15);
        }
    }
}
