//! Confidence-trace analytics: threshold calibration, step segmentation and
//! minimum-confidence localization.
//!
//! A token is a *split token* when its confidence is strictly below the split
//! threshold; each split token opens a new step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample, LanguageModel, SamplingConfig};

/// Calibrated thresholds, recorded alongside every dataset built from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub q_split: f64,
    pub q_stop: f64,
    pub tau_split: f64,
    pub tau_stop: f64,
    pub calibration_size: usize,
}

/// Calibration report file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub q_split: f64,
    pub q_stop: f64,
    pub tau_split: f64,
    pub tau_stop: f64,
    pub calibration_size: usize,
    pub model_id: String,
}

impl CalibrationReport {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            q_split: self.q_split,
            q_stop: self.q_stop,
            tau_split: self.tau_split,
            tau_stop: self.tau_stop,
            calibration_size: self.calibration_size,
        }
    }
}

/// Lower empirical quantile: the element at index `floor(q·(N−1))` of the
/// ascending sort. No interpolation, so the result is always a member of the
/// multiset.
pub fn calibrate_threshold(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile {q} outside (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (q * (sorted.len() - 1) as f64).floor() as usize;
    Ok(sorted[idx])
}

/// Both thresholds from one pool of confidences.
pub fn calibrate(values: &[f64], q_split: f64, q_stop: f64) -> Result<Thresholds> {
    Ok(Thresholds {
        q_split,
        q_stop,
        tau_split: calibrate_threshold(values, q_split)?,
        tau_stop: calibrate_threshold(values, q_stop)?,
        calibration_size: values.len(),
    })
}

/// Samples one completion per prompt and pools every recorded confidence.
/// Prompt `i` is sampled with seed `derive(sampling.seed, i)`.
pub fn collect_confidences<M: LanguageModel>(
    model: &M,
    prompts: &[Vec<u32>],
    sampling: &SamplingConfig,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let per_prompt: Vec<Vec<f64>> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let cfg = SamplingConfig {
                seed: crate::rng::derive_seed(sampling.seed, &[i as u64]),
                ..sampling.clone()
            };
            sample(model, p, &cfg).map(|s| s.confidences)
        })
        .collect::<Result<_>>()?;
    Ok(per_prompt.into_iter().flatten().collect())
}

/// Step boundaries induced by a split threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSegmentation {
    /// Strictly increasing; the first element is 0.
    pub step_starts: Vec<usize>,
    pub len: usize,
}

impl StepSegmentation {
    /// Half-open index ranges of every step.
    pub fn steps(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.step_starts.iter().enumerate().map(move |(i, &s)| {
            let end = self.step_starts.get(i + 1).copied().unwrap_or(self.len);
            s..end
        })
    }

    /// Index of the step containing token `t`.
    pub fn step_of(&self, t: usize) -> usize {
        self.step_starts.partition_point(|&s| s <= t) - 1
    }
}

/// A step starts at index 0 and at every index whose confidence is below `tau`.
pub fn segment_steps(trace: &[f64], tau: f64) -> StepSegmentation {
    let mut step_starts = Vec::new();
    if !trace.is_empty() {
        step_starts.push(0);
        step_starts.extend((1..trace.len()).filter(|&t| trace[t] < tau));
    }
    StepSegmentation {
        step_starts,
        len: trace.len(),
    }
}

/// Earliest index attaining the global minimum.
///
/// # Panics
/// Panics on an empty trace.
pub fn min_confidence_index(trace: &[f64]) -> usize {
    assert!(!trace.is_empty(), "empty confidence trace");
    trace
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}
