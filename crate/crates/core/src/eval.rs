//! Accuracy evaluation, preference margins, positional statistics and the
//! threshold and scaling sweep drivers.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{calibrate, min_confidence_index, Thresholds};
use crate::corpus::{first_error_index, verify_answer, ProblemInstance, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{sample, Checkpoint, LanguageModel, Policy, SampledSequence, SamplingConfig};
use crate::pairs::{build_dataset, PairBuilderConfig, PairDataset, PreferenceTriplet};
use crate::reward::RewardModel;
use crate::trainer::{objective, segment_deltas, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_problems: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub decode_mode: DecodeMode,
    pub model_id: String,
}

/// Greedy completion of every problem, in input order.
pub fn greedy_completions<M: LanguageModel + ?Sized>(
    policy: &M,
    problems: &[ProblemInstance],
    max_new_tokens: usize,
) -> Result<Vec<SampledSequence>> {
    let tok = Tokenizer::new();
    let cfg = SamplingConfig::greedy(max_new_tokens);
    problems
        .par_iter()
        .map(|p| sample(policy, &tok.prompt_tokens(&p.expression)?, &cfg))
        .collect()
}

pub fn evaluate_accuracy<M: LanguageModel + ?Sized>(
    policy: &M,
    problems: &[ProblemInstance],
    max_new_tokens: usize,
) -> Result<EvalReport> {
    if problems.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation set".into()));
    }
    let tok = Tokenizer::new();
    let completions = greedy_completions(policy, problems, max_new_tokens)?;
    let n_correct = completions
        .iter()
        .zip(problems)
        .filter(|(s, p)| verify_answer(p, &tok.completion_text(&s.generated_tokens)))
        .count();
    Ok(EvalReport {
        n_problems: problems.len(),
        n_correct,
        accuracy: n_correct as f64 / problems.len() as f64,
        decode_mode: DecodeMode::Greedy,
        model_id: policy.model_id(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub n_triplets: usize,
    pub mean_delta_theta: f64,
    pub mean_delta: f64,
    pub margin_accuracy: f64,
}

/// Trainer quantities measured without updating anything.
pub fn preference_margin(
    policy: &Checkpoint,
    reference: &Checkpoint,
    triplets: &[PreferenceTriplet],
) -> Result<MarginReport> {
    if triplets.is_empty() {
        return Err(Error::InvalidConfig("no triplets to measure".into()));
    }
    if policy.tokenizer_fingerprint != reference.tokenizer_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: reference.tokenizer_fingerprint.clone(),
            found: policy.tokenizer_fingerprint.clone(),
        });
    }
    let dt = segment_deltas(&policy.model::<f32>()?, triplets, 64)?;
    let dr = if policy.weights == reference.weights && policy.model_config == reference.model_config {
        dt.clone()
    } else {
        segment_deltas(&reference.model::<f32>()?, triplets, 64)?
    };
    let (stats, _) = objective(&dt, &dr, 1.0);
    Ok(MarginReport {
        n_triplets: triplets.len(),
        mean_delta_theta: stats.mean_delta_theta,
        mean_delta: stats.mean_delta,
        margin_accuracy: stats.margin_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    Before,
    Same,
    After,
}

/// Where the first error sits relative to the minimum-confidence token, or
/// `None` when the sample is correct or its error cannot be localized.
pub fn classify(problem: &ProblemInstance, sample: &SampledSequence) -> Option<Position> {
    let tok = Tokenizer::new();
    if sample.generated_tokens.is_empty()
        || verify_answer(problem, &tok.completion_text(&sample.generated_tokens))
    {
        return None;
    }
    let err = first_error_index(problem, &sample.generated_tokens)?;
    Some(relative_position(err, min_confidence_index(&sample.confidences)))
}

pub fn relative_position(first_error: usize, min_confidence: usize) -> Position {
    match first_error.cmp(&min_confidence) {
        std::cmp::Ordering::Less => Position::Before,
        std::cmp::Ordering::Equal => Position::Same,
        std::cmp::Ordering::Greater => Position::After,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PositionalReport {
    pub n_incorrect_samples: usize,
    pub before: usize,
    pub same: usize,
    pub after: usize,
}

impl PositionalReport {
    /// Fraction of localized incorrect samples whose first error is strictly after the minimum.
    pub fn after_fraction(&self) -> f64 {
        if self.n_incorrect_samples == 0 {
            return 0.0;
        }
        self.after as f64 / self.n_incorrect_samples as f64
    }

    /// Two-bucket view with ties counted as "after": `(before, after)`.
    pub fn two_bucket(&self) -> (usize, usize) {
        (self.before, self.same + self.after)
    }

    pub fn render(&self) -> String {
        let (before, after) = self.two_bucket();
        let pct = |x: usize| 100.0 * x as f64 / self.n_incorrect_samples.max(1) as f64;
        let mut s = String::new();
        let _ = writeln!(s, "incorrect samples with a localized error: {}", self.n_incorrect_samples);
        let _ = writeln!(s, "{:<28}{:>8}{:>9}", "position of first error", "count", "share");
        let _ = writeln!(s, "{:<28}{:>8}{:>8.1}%", "before lowest confidence", self.before, pct(self.before));
        let _ = writeln!(s, "{:<28}{:>8}{:>8.1}%", "at lowest confidence", self.same, pct(self.same));
        let _ = writeln!(s, "{:<28}{:>8}{:>8.1}%", "after lowest confidence", self.after, pct(self.after));
        let _ = writeln!(s, "two-bucket view (ties as after): before {before}, after {after}");
        s
    }
}

pub fn positional_stats(samples: &[SampledSequence], problems: &[ProblemInstance]) -> Result<PositionalReport> {
    if samples.len() != problems.len() {
        return Err(Error::InvalidConfig(format!(
            "{} samples but {} problems",
            samples.len(),
            problems.len()
        )));
    }
    let mut report = PositionalReport::default();
    for (s, p) in samples.iter().zip(problems) {
        if let Some(pos) = classify(p, s) {
            report.n_incorrect_samples += 1;
            match pos {
                Position::Before => report.before += 1,
                Position::Same => report.same += 1,
                Position::After => report.after += 1,
            }
        }
    }
    Ok(report)
}

/// Mean of `|s⁺| + |s⁻|` over the dataset.
pub fn avg_tokens_per_pair(triplets: &[PreferenceTriplet]) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::InvalidConfig("empty pair dataset".into()));
    }
    let total: usize = triplets
        .iter()
        .map(|t| t.chosen_tokens.len() + t.rejected_tokens.len())
        .sum();
    Ok(total as f64 / triplets.len() as f64)
}

/// Everything a sweep holds fixed.
pub struct SweepSetup<'a, R> {
    pub initial: &'a Checkpoint,
    pub reward: &'a R,
    pub prompts: &'a [ProblemInstance],
    /// Confidences the thresholds are calibrated from.
    pub calibration: &'a [f64],
    pub q_split: f64,
    pub pairs: PairBuilderConfig,
    /// `None` builds datasets only.
    pub train: Option<TrainConfig>,
    pub eval_problems: &'a [ProblemInstance],
    pub eval_max_new_tokens: usize,
    /// Held-out triplets for `Δθ`; the training set itself when absent.
    pub held_out: Option<&'a [PreferenceTriplet]>,
}

struct Outcome {
    dataset: PairDataset,
    accuracy: Option<f64>,
    mean_delta_theta: Option<f64>,
}

fn run_once<R: RewardModel<Policy<f32>>>(
    setup: &SweepSetup<'_, R>,
    pairs: &PairBuilderConfig,
) -> Result<Outcome> {
    let policy = setup.initial.policy::<f32>()?;
    let dataset = build_dataset(&policy, setup.reward, setup.prompts, pairs)?;
    let Some(train_cfg) = &setup.train else {
        return Ok(Outcome {
            dataset,
            accuracy: None,
            mean_delta_theta: None,
        });
    };
    if dataset.triplets.is_empty() {
        return Err(Error::InvalidConfig("sweep produced an empty dataset".into()));
    }
    let trained = train::<f32>(setup.initial, &dataset.triplets, train_cfg, |_| {})?;
    let accuracy = if setup.eval_problems.is_empty() {
        None
    } else {
        Some(evaluate_accuracy(&trained.policy::<f32>()?, setup.eval_problems, setup.eval_max_new_tokens)?.accuracy)
    };
    let measured = setup.held_out.unwrap_or(&dataset.triplets);
    let margin = preference_margin(&trained, setup.initial, measured)?;
    Ok(Outcome {
        dataset,
        accuracy,
        mean_delta_theta: Some(margin.mean_delta_theta),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub q_stop: f64,
    pub tau_stop: f64,
    pub n_pairs: usize,
    pub avg_tokens_per_pair: f64,
    pub accuracy: Option<f64>,
}

/// Rebuilds (and optionally retrains) once per stop quantile, all with the
/// same seeds.
pub fn threshold_sweep<R: RewardModel<Policy<f32>>>(
    setup: &SweepSetup<'_, R>,
    q_stops: &[f64],
) -> Result<Vec<ThresholdRow>> {
    if q_stops.len() < 2 {
        return Err(Error::InvalidConfig("a threshold sweep needs at least two values".into()));
    }
    q_stops
        .iter()
        .map(|&q_stop| {
            let thresholds: Thresholds = calibrate(setup.calibration, setup.q_split, q_stop)?;
            let pairs = PairBuilderConfig {
                thresholds: thresholds.clone(),
                ..setup.pairs.clone()
            };
            let out = run_once(setup, &pairs)?;
            Ok(ThresholdRow {
                q_stop,
                tau_stop: thresholds.tau_stop,
                n_pairs: out.dataset.triplets.len(),
                avg_tokens_per_pair: avg_tokens_per_pair(&out.dataset.triplets).unwrap_or(f64::NAN),
                accuracy: out.accuracy,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub m: usize,
    pub dataset_size: usize,
    pub accuracy: Option<f64>,
    pub mean_delta_theta: Option<f64>,
}

/// One dataset per samples-per-prompt value, sharing the base seed so smaller
/// datasets are subsets of larger ones.
pub fn scaling_sweep<R: RewardModel<Policy<f32>>>(
    setup: &SweepSetup<'_, R>,
    ms: &[usize],
) -> Result<Vec<ScalingRow>> {
    if ms.is_empty() || ms.contains(&0) {
        return Err(Error::InvalidConfig("samples-per-prompt values must be at least 1".into()));
    }
    ms.iter()
        .map(|&m| {
            let pairs = PairBuilderConfig {
                samples_per_prompt: m,
                ..setup.pairs.clone()
            };
            let out = run_once(setup, &pairs)?;
            Ok(ScalingRow {
                m,
                dataset_size: out.dataset.triplets.len(),
                accuracy: out.accuracy,
                mean_delta_theta: out.mean_delta_theta,
            })
        })
        .collect()
}

/// Writes rows as CSV with a header line named after the row fields.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn render_threshold_table(rows: &[ThresholdRow]) -> String {
    let mut s = format!("{:>8}{:>10}{:>9}{:>16}{:>10}\n", "q_stop", "tau_stop", "pairs", "tokens/pair", "accuracy");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>8.3}{:>10.4}{:>9}{:>16.2}{:>10}",
            r.q_stop,
            r.tau_stop,
            r.n_pairs,
            r.avg_tokens_per_pair,
            fmt_opt(r.accuracy, 4)
        );
    }
    s
}

pub fn render_scaling_table(rows: &[ScalingRow]) -> String {
    let mut s = format!("{:>4}{:>10}{:>10}{:>14}\n", "m", "pairs", "accuracy", "mean dtheta");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>4}{:>10}{:>10}{:>14}",
            r.m,
            r.dataset_size,
            fmt_opt(r.accuracy, 4),
            fmt_opt(r.mean_delta_theta, 4)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{render_solution, Tokenizer, EOS};
    use crate::model::StopReason;
    use crate::reward::scripted::{EosPolicy, GoldPolicy};
    use crate::trainer::fixtures::{small_batch, tiny_config, triplet};

    fn problems() -> Vec<ProblemInstance> {
        ["(1+(2*3))", "((4-1)*5)", "(((7*8)-9)+1)"]
            .iter()
            .map(|e| ProblemInstance::from_expression(e).unwrap())
            .collect()
    }

    #[test]
    fn oracle_and_empty_policies() {
        let ps = problems();
        let gold = evaluate_accuracy(&GoldPolicy::new(10.0), &ps, 96).unwrap();
        assert_eq!(gold.accuracy, 1.0);
        assert_eq!(gold, evaluate_accuracy(&GoldPolicy::new(10.0), &ps, 96).unwrap());
        assert_eq!(evaluate_accuracy(&EosPolicy, &ps, 96).unwrap().accuracy, 0.0);
        assert!(evaluate_accuracy(&EosPolicy, &[], 96).is_err());
    }

    #[test]
    fn self_margin_is_zero() {
        let c = Checkpoint::init(&tiny_config(1), &Tokenizer::new()).unwrap();
        let m = preference_margin(&c, &c, &small_batch()).unwrap();
        assert_eq!(m.mean_delta, 0.0);
        let mut same = triplet("(1+2)", "", "1+2=3", "");
        same.rejected_tokens = same.chosen_tokens.clone();
        assert_eq!(preference_margin(&c, &c, &[same]).unwrap().mean_delta_theta, 0.0);
    }

    fn sample_of(text: &str, min_at: usize) -> SampledSequence {
        let tok = Tokenizer::new();
        let mut tokens = tok.encode(text).unwrap();
        tokens.push(EOS);
        let mut confidences = vec![0.9; tokens.len()];
        confidences[min_at] = 0.05;
        SampledSequence {
            prompt_tokens: tok.prompt_tokens("((2*3)+4)").unwrap(),
            generated_tokens: tokens,
            confidences,
            stopped_by: StopReason::Eos,
        }
    }

    #[test]
    fn relative_position_examples() {
        assert_eq!(relative_position(5, 9), Position::Before);
        assert_eq!(relative_position(7, 7), Position::Same);
        assert_eq!(relative_position(9, 5), Position::After);
    }

    #[test]
    fn positional_buckets_partition_incorrect_samples() {
        let p = ProblemInstance::from_expression("((2*3)+4)").unwrap();
        // the second line is the first wrong one and starts at token 6
        let wrong = "2*3=6\n6+4=9\n#### 9";
        let tok = Tokenizer::new();
        let mut t = tok.encode(wrong).unwrap();
        t.push(EOS);
        assert_eq!(first_error_index(&p, &t), Some(6));
        let samples = vec![
            sample_of(wrong, 9),
            sample_of(wrong, 6),
            sample_of(wrong, 2),
            sample_of(&render_solution(&p), 3),
        ];
        let report = positional_stats(&samples, &vec![p; 4]).unwrap();
        assert_eq!(
            report,
            PositionalReport {
                n_incorrect_samples: 3,
                before: 1,
                same: 1,
                after: 1
            }
        );
        assert_eq!(report.two_bucket(), (1, 2));
        assert!(report.render().contains("after lowest confidence"));
    }

    #[test]
    fn tokens_per_pair_accounting() {
        let mut a = triplet("(1+2)", "", "", "");
        let tok = Tokenizer::new();
        a.chosen_tokens = tok.encode("123").unwrap();
        a.rejected_tokens = tok.encode("45678").unwrap();
        let mut b = a.clone();
        b.chosen_tokens = tok.encode("12").unwrap();
        b.rejected_tokens = tok.encode("34").unwrap();
        assert_eq!(avg_tokens_per_pair(&[a.clone(), b]).unwrap(), 6.0);
        a.chosen_tokens.truncate(1);
        a.rejected_tokens.truncate(1);
        assert_eq!(avg_tokens_per_pair(&[a]).unwrap(), 2.0);
        assert!(avg_tokens_per_pair(&[]).is_err());
    }

    #[test]
    fn tables_have_one_row_per_setting() {
        let rows = vec![
            ThresholdRow {
                q_stop: 0.02,
                tau_stop: 0.1,
                n_pairs: 10,
                avg_tokens_per_pair: 12.5,
                accuracy: Some(0.6),
            },
            ThresholdRow {
                q_stop: 0.04,
                tau_stop: 0.2,
                n_pairs: 9,
                avg_tokens_per_pair: 10.0,
                accuracy: None,
            },
        ];
        assert_eq!(render_threshold_table(&rows).lines().count(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("q_stop,tau_stop,n_pairs,avg_tokens_per_pair,accuracy\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
