//! Step-wise preference pair construction.
//!
//! For each sampled completion: branch at the earliest minimum-confidence
//! token, score the top-k next-token candidates with a reward model, roll out
//! the best and worst candidates until EOS or a low-confidence token, and
//! emit `(prompt, s_init, chosen, rejected)`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confidence::{min_confidence_index, Thresholds};
use crate::corpus::{ProblemInstance, TokenId, Tokenizer, EOS};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{
    continue_generation, sample_with, sequence_logprob, top_k_from_logits, LanguageModel,
    SampledSequence, SamplingConfig, Scalar, StopReason, Transformer,
};
use crate::reward::{CandidateScore, RewardModel};
use crate::rng;

const ROLE_SAMPLE: u64 = 0;
const ROLE_REWARD: u64 = 1;
const ROLE_CHOSEN: u64 = 2;
const ROLE_REJECTED: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBuilderConfig {
    pub k: usize,
    pub thresholds: Thresholds,
    /// Sampling of the initial trajectory and of both branches; `seed` is the dataset seed.
    pub sampling: SamplingConfig,
    pub samples_per_prompt: usize,
    pub max_branch_tokens: usize,
    pub min_score_gap: f64,
    pub workers: usize,
}

impl PairBuilderConfig {
    pub fn new(thresholds: Thresholds) -> Self {
        Self {
            k: 8,
            thresholds,
            sampling: SamplingConfig::default(),
            samples_per_prompt: 1,
            max_branch_tokens: 192,
            min_score_gap: 0.0,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("k must be at least 2".into()));
        }
        if self.samples_per_prompt == 0 {
            return Err(Error::InvalidConfig("samples_per_prompt must be at least 1".into()));
        }
        if self.max_branch_tokens == 0 {
            return Err(Error::InvalidConfig("max_branch_tokens must be at least 1".into()));
        }
        if !(self.min_score_gap >= 0.0) {
            return Err(Error::InvalidConfig("min_score_gap must be non-negative".into()));
        }
        self.sampling.validate()
    }

    /// Seed of sample `sample_index` of prompt `prompt_index`.
    pub fn sample_seed(&self, prompt_index: usize, sample_index: usize) -> u64 {
        rng::derive_seed(self.sampling.seed, &[prompt_index as u64, sample_index as u64])
    }
}

/// One line of the pair dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub prompt: String,
    pub prompt_tokens: Vec<TokenId>,
    pub s_init_tokens: Vec<TokenId>,
    pub chosen_tokens: Vec<TokenId>,
    pub rejected_tokens: Vec<TokenId>,
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub branch_index: usize,
    pub stop_chosen: StopReason,
    pub stop_rejected: StopReason,
    pub model_id: String,
    pub tau_split: f64,
    pub tau_stop: f64,
    pub seed: u64,
}

impl PreferenceTriplet {
    /// `prompt_tokens ++ s_init_tokens`, the conditioning context of both segments.
    pub fn context(&self) -> Vec<TokenId> {
        let mut c = self.prompt_tokens.clone();
        c.extend_from_slice(&self.s_init_tokens);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SkipReason {
    ScoreTie,
    IdenticalSegments,
    EmptyGeneration,
}

impl SkipReason {
    pub const ALL: [SkipReason; 3] = [
        SkipReason::ScoreTie,
        SkipReason::IdenticalSegments,
        SkipReason::EmptyGeneration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::ScoreTie => "ScoreTie",
            SkipReason::IdenticalSegments => "IdenticalSegments",
            SkipReason::EmptyGeneration => "EmptyGeneration",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Built(Box<PreferenceTriplet>),
    Skipped(SkipReason),
}

/// Result of one (prompt, sample) job, with the trajectory it started from.
#[derive(Debug, Clone)]
pub struct Attempt {
    pub prompt_index: usize,
    pub sample_index: usize,
    pub sample: SampledSequence,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub n_prompts: usize,
    pub samples_per_prompt: usize,
    pub n_built: usize,
    pub skip_counts: BTreeMap<String, usize>,
}

impl BuildReport {
    pub fn total_skips(&self) -> usize {
        self.skip_counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub triplets: Vec<PreferenceTriplet>,
    pub report: BuildReport,
}

/// The `k` highest-logit tokens after `(x, s_init)`, descending, ties by token id.
pub fn top_k_candidates<M: LanguageModel + ?Sized>(
    policy: &M,
    x_tokens: &[TokenId],
    s_init_tokens: &[TokenId],
    k: usize,
) -> Result<Vec<(TokenId, f64)>> {
    if k > policy.vocab_size() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} exceeds vocabulary size {}",
            policy.vocab_size()
        )));
    }
    let mut prefix = x_tokens.to_vec();
    prefix.extend_from_slice(s_init_tokens);
    let (_, logits) = policy.prefill(&prefix)?;
    Ok(top_k_from_logits(&logits, k))
}

/// Indices `(chosen, rejected)` into `scores`: highest score (ties: higher
/// logit, then earlier) and lowest score (ties: lower logit, then later).
/// `None` when the score spread does not exceed `min_score_gap`.
pub fn select_pair(scores: &[CandidateScore], min_score_gap: f64) -> Option<(usize, usize)> {
    if scores.len() < 2 {
        return None;
    }
    let mut best = 0;
    let mut worst = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let b = &scores[best];
        if s.score > b.score || (s.score == b.score && s.logit > b.logit) {
            best = i;
        }
        let w = &scores[worst];
        if s.score < w.score || (s.score == w.score && s.logit <= w.logit) {
            worst = i;
        }
    }
    (scores[best].score - scores[worst].score > min_score_gap).then_some((best, worst))
}

fn rollout_from_state<M: LanguageModel + ?Sized>(
    policy: &M,
    prefix_state: &M::State,
    first_token: TokenId,
    tau_stop: f64,
    sampling: &SamplingConfig,
    max_branch_tokens: usize,
    seed: u64,
) -> Result<(Vec<TokenId>, StopReason)> {
    let mut segment = vec![first_token];
    if first_token == EOS {
        return Ok((segment, StopReason::Eos));
    }
    if max_branch_tokens <= 1 {
        return Ok((segment, StopReason::MaxLen));
    }
    let mut state = prefix_state.clone();
    let logits = policy.extend(&mut state, first_token)?;
    let mut r = rng::stream(seed, &[]);
    let (rest, _, reason) = continue_generation(
        policy,
        &mut state,
        logits,
        sampling,
        max_branch_tokens - 1,
        &mut r,
        |_, conf| conf < tau_stop,
    )?;
    segment.extend(rest);
    Ok((segment, reason))
}

/// Forces `first_token` after `(x, s_init)` and keeps sampling until EOS
/// (kept), a token with confidence below `tau_stop` (kept), or
/// `max_branch_tokens` total. The forced token never triggers the stop rule.
pub fn rollout_branch<M: LanguageModel + ?Sized>(
    policy: &M,
    x_tokens: &[TokenId],
    s_init_tokens: &[TokenId],
    first_token: TokenId,
    thresholds: &Thresholds,
    sampling: &SamplingConfig,
    max_branch_tokens: usize,
) -> Result<(Vec<TokenId>, StopReason)> {
    let mut prefix = x_tokens.to_vec();
    prefix.extend_from_slice(s_init_tokens);
    let (state, _) = policy.prefill(&prefix)?;
    rollout_from_state(
        policy,
        &state,
        first_token,
        thresholds.tau_stop,
        sampling,
        max_branch_tokens,
        sampling.seed,
    )
}

/// Builds at most one triplet from one sampled trajectory.
pub fn build_triplet<M, R>(
    policy: &M,
    reward: &R,
    problem: &ProblemInstance,
    x_tokens: &[TokenId],
    config: &PairBuilderConfig,
    sample_seed: u64,
) -> Result<(SampledSequence, Outcome)>
where
    M: LanguageModel + ?Sized,
    R: RewardModel<M> + ?Sized,
{
    let mut srng = rng::stream(sample_seed, &[ROLE_SAMPLE]);
    let sample = sample_with(policy, x_tokens, &config.sampling, &mut srng)?;
    if sample.generated_tokens.is_empty() {
        return Ok((sample, Outcome::Skipped(SkipReason::EmptyGeneration)));
    }
    let branch_index = min_confidence_index(&sample.confidences);
    let s_init = &sample.generated_tokens[..branch_index];

    let mut prefix = x_tokens.to_vec();
    prefix.extend_from_slice(s_init);
    let (state, logits) = policy.prefill(&prefix)?;
    let candidates = top_k_from_logits(&logits, config.k.min(policy.vocab_size()));
    let scores = reward.score_candidates(
        policy,
        problem,
        x_tokens,
        s_init,
        &candidates,
        rng::derive_seed(sample_seed, &[ROLE_REWARD]),
    )?;
    let Some((best, worst)) = select_pair(&scores, config.min_score_gap) else {
        return Ok((sample, Outcome::Skipped(SkipReason::ScoreTie)));
    };
    let tau_stop = config.thresholds.tau_stop;
    let (chosen, stop_chosen) = rollout_from_state(
        policy,
        &state,
        scores[best].token,
        tau_stop,
        &config.sampling,
        config.max_branch_tokens,
        rng::derive_seed(sample_seed, &[ROLE_CHOSEN]),
    )?;
    let (rejected, stop_rejected) = rollout_from_state(
        policy,
        &state,
        scores[worst].token,
        tau_stop,
        &config.sampling,
        config.max_branch_tokens,
        rng::derive_seed(sample_seed, &[ROLE_REJECTED]),
    )?;
    if chosen == rejected {
        return Ok((sample, Outcome::Skipped(SkipReason::IdenticalSegments)));
    }
    let triplet = PreferenceTriplet {
        prompt: problem.expression.clone(),
        prompt_tokens: x_tokens.to_vec(),
        s_init_tokens: s_init.to_vec(),
        chosen_tokens: chosen,
        rejected_tokens: rejected,
        chosen_score: scores[best].score,
        rejected_score: scores[worst].score,
        branch_index,
        stop_chosen,
        stop_rejected,
        model_id: policy.model_id(),
        tau_split: config.thresholds.tau_split,
        tau_stop,
        seed: sample_seed,
    };
    Ok((sample, Outcome::Built(Box::new(triplet))))
}

/// Runs every `(prompt, sample)` job on `config.workers` threads. The result
/// is in canonical `(prompt index, sample index)` order.
pub fn build_attempts<M, R>(
    policy: &M,
    reward: &R,
    problems: &[ProblemInstance],
    config: &PairBuilderConfig,
) -> Result<Vec<Attempt>>
where
    M: LanguageModel + ?Sized,
    R: RewardModel<M> + ?Sized,
{
    config.validate()?;
    let tok = Tokenizer::new();
    let prompts: Vec<Vec<TokenId>> = problems
        .iter()
        .map(|p| tok.prompt_tokens(&p.expression))
        .collect::<Result<_>>()?;
    let m = config.samples_per_prompt;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..problems.len() * m)
            .into_par_iter()
            .map(|job| {
                let (i, j) = (job / m, job % m);
                let (sample, outcome) =
                    build_triplet(policy, reward, &problems[i], &prompts[i], config, config.sample_seed(i, j))?;
                Ok(Attempt {
                    prompt_index: i,
                    sample_index: j,
                    sample,
                    outcome,
                })
            })
            .collect()
    })
}

pub fn dataset_from_attempts(attempts: &[Attempt], n_prompts: usize, samples_per_prompt: usize) -> PairDataset {
    let mut skip_counts: BTreeMap<String, usize> =
        SkipReason::ALL.iter().map(|r| (r.as_str().to_string(), 0)).collect();
    let mut triplets = Vec::new();
    for a in attempts {
        match &a.outcome {
            Outcome::Built(t) => triplets.push((**t).clone()),
            Outcome::Skipped(r) => *skip_counts.get_mut(r.as_str()).expect("known reason") += 1,
        }
    }
    PairDataset {
        report: BuildReport {
            n_prompts,
            samples_per_prompt,
            n_built: triplets.len(),
            skip_counts,
        },
        triplets,
    }
}

pub fn build_dataset<M, R>(
    policy: &M,
    reward: &R,
    problems: &[ProblemInstance],
    config: &PairBuilderConfig,
) -> Result<PairDataset>
where
    M: LanguageModel + ?Sized,
    R: RewardModel<M> + ?Sized,
{
    if problems.is_empty() {
        return Err(Error::InvalidConfig("no prompts to build pairs from".into()));
    }
    let attempts = build_attempts(policy, reward, problems, config)?;
    Ok(dataset_from_attempts(&attempts, problems.len(), config.samples_per_prompt))
}

pub struct DatasetFiles {
    pub pairs: PathBuf,
    pub report: PathBuf,
}

/// Writes `pairs.jsonl` and `build_report.json` into `dir`.
pub fn write_dataset(dataset: &PairDataset, dir: &Path) -> Result<DatasetFiles> {
    let files = DatasetFiles {
        pairs: dir.join("pairs.jsonl"),
        report: dir.join("build_report.json"),
    };
    jsonl::write(&files.pairs, &dataset.triplets)?;
    jsonl::write_json(&files.report, &dataset.report)?;
    Ok(files)
}

pub fn read_pairs(path: &Path) -> Result<Vec<PreferenceTriplet>> {
    jsonl::read(path)
}

/// A pair from an external step-wise dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalPair {
    pub prompt: String,
    pub init_text: String,
    pub chosen_text: String,
    pub rejected_text: String,
}

fn truncate_at_low_confidence(probs: &[f64], tau_stop: f64) -> Option<usize> {
    (1..probs.len()).find(|&t| probs[t] < tau_stop)
}

/// Re-divides externally annotated pairs by the policy's own confidence:
/// the shared prefix is cut just before its lowest-probability token, and
/// each segment (terminated by EOS) is cut after its first token, other than
/// the first, whose probability falls below `tau_stop`. Probabilities are
/// teacher-forced at temperature 1; segments are scored in their original
/// context `prompt ++ init`.
pub fn resegment_external_pairs<T: Scalar>(
    policy: &Transformer<T>,
    model_id: &str,
    pairs: &[ExternalPair],
    thresholds: &Thresholds,
) -> Result<Vec<PreferenceTriplet>> {
    let tok = Tokenizer::new();
    pairs
        .iter()
        .map(|pair| {
            let x = tok.prompt_tokens(&pair.prompt)?;
            let init = tok.encode(&pair.init_text)?;
            let cut = if init.is_empty() {
                0
            } else {
                let (lp, _) = sequence_logprob(policy, &x, &init)?;
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                min_confidence_index(&probs)
            };
            let mut context = x.clone();
            context.extend_from_slice(&init);
            let segment = |text: &str| -> Result<(Vec<TokenId>, StopReason)> {
                let mut seg = tok.encode(text)?;
                seg.push(EOS);
                let (lp, _) = sequence_logprob(policy, &context, &seg)?;
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                Ok(match truncate_at_low_confidence(&probs, thresholds.tau_stop) {
                    Some(t) => (seg[..=t].to_vec(), StopReason::BelowTauStop),
                    None => (seg, StopReason::Eos),
                })
            };
            let (chosen, stop_chosen) = segment(&pair.chosen_text)?;
            let (rejected, stop_rejected) = segment(&pair.rejected_text)?;
            Ok(PreferenceTriplet {
                prompt: pair.prompt.clone(),
                prompt_tokens: x,
                s_init_tokens: init[..cut].to_vec(),
                chosen_tokens: chosen,
                rejected_tokens: rejected,
                chosen_score: 1.0,
                rejected_score: 0.0,
                branch_index: cut,
                stop_chosen,
                stop_rejected,
                model_id: model_id.to_string(),
                tau_split: thresholds.tau_split,
                tau_stop: thresholds.tau_stop,
                seed: 0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{render_solution, Tokenizer};
    use crate::model::{Checkpoint, ModelConfig};
    use crate::reward::scripted::GoldPolicy;
    use crate::reward::{McReward, RewardConfig};

    fn thresholds(tau_stop: f64) -> Thresholds {
        Thresholds {
            q_split: 0.02,
            q_stop: 0.02,
            tau_split: 0.3,
            tau_stop,
            calibration_size: 100,
        }
    }

    fn score(token: TokenId, logit: f64, score: f64) -> CandidateScore {
        CandidateScore { token, logit, score }
    }

    #[test]
    fn selection_breaks_ties_by_logit() {
        let scores = [score(5, 2.0, 0.5), score(7, 1.0, 0.5), score(9, 0.5, 0.0), score(11, 0.2, 0.0)];
        assert_eq!(select_pair(&scores, 0.0), Some((0, 3)));
        assert_eq!(select_pair(&scores, 0.5), None);
        let flat = [score(5, 2.0, 0.25), score(7, 1.0, 0.25)];
        assert_eq!(select_pair(&flat, 0.0), None);
        let unordered = [score(5, 0.1, 0.75), score(7, 3.0, 0.75), score(9, 2.0, 0.0)];
        assert_eq!(select_pair(&unordered, 0.0), Some((1, 2)));
    }

    fn prompt() -> (ProblemInstance, Vec<TokenId>, Vec<TokenId>) {
        let tok = Tokenizer::new();
        let p = ProblemInstance::from_expression("((3+5)*2)").unwrap();
        let x = tok.prompt_tokens(&p.expression).unwrap();
        let init = tok.encode("3+5=8\n").unwrap();
        (p, x, init)
    }

    #[test]
    fn rollout_stop_rules() {
        let tok = Tokenizer::new();
        let (_, x, init) = prompt();
        let sampling = SamplingConfig::default();
        let confident = GoldPolicy::new(30.0);
        let seven = tok.token_of('7').unwrap();
        let eight = tok.token_of('8').unwrap();

        // a deviating first token is kept even though the policy gives it ~0 mass
        let (seg, why) = rollout_branch(&confident, &x, &init, seven, &thresholds(0.5), &sampling, 50).unwrap();
        assert_eq!((seg, why), (vec![seven, EOS], StopReason::Eos));

        let (seg, why) = rollout_branch(&confident, &x, &init, eight, &thresholds(0.5), &sampling, 50).unwrap();
        assert_eq!(tok.decode_display(&seg), "8*2=16\n#### 16<EOS>");
        assert_eq!(why, StopReason::Eos);

        let (seg, why) = rollout_branch(&confident, &x, &init, eight, &thresholds(0.5), &sampling, 3).unwrap();
        assert_eq!((seg.len(), why), (3, StopReason::MaxLen));
        let (seg, why) = rollout_branch(&confident, &x, &init, eight, &thresholds(0.5), &sampling, 1).unwrap();
        assert_eq!((seg, why), (vec![eight], StopReason::MaxLen));
        let (seg, why) = rollout_branch(&confident, &x, &init, EOS, &thresholds(0.5), &sampling, 50).unwrap();
        assert_eq!((seg, why), (vec![EOS], StopReason::Eos));

        // every sampled token is below a stop threshold of 1, so exactly one follows the forced token
        let unsure = GoldPolicy::new(3.0);
        let (seg, why) = rollout_branch(&unsure, &x, &init, eight, &thresholds(1.0), &sampling, 50).unwrap();
        assert_eq!((seg.len(), why), (2, StopReason::BelowTauStop));
    }

    #[test]
    fn raising_the_stop_threshold_never_lengthens_a_segment() {
        let (_, x, init) = prompt();
        let policy = GoldPolicy::new(3.0);
        let eight = Tokenizer::new().token_of('8').unwrap();
        for seed in 0..20 {
            let sampling = SamplingConfig {
                seed,
                ..SamplingConfig::default()
            };
            let mut prev = usize::MAX;
            for tau in [0.0, 0.5, 0.7, 0.8, 0.9, 1.0] {
                let (seg, _) = rollout_branch(&policy, &x, &init, eight, &thresholds(tau), &sampling, 40).unwrap();
                assert!(seg.len() <= prev);
                prev = seg.len();
            }
        }
    }

    fn problems(n: usize) -> Vec<ProblemInstance> {
        let cfg = crate::corpus::CorpusConfig {
            n_train: n,
            n_eval: 1,
            n_ops_range: [2, 3],
            ..Default::default()
        };
        crate::corpus::generate_split(&cfg, false).unwrap()
    }

    fn config(m: usize, workers: usize) -> PairBuilderConfig {
        PairBuilderConfig {
            samples_per_prompt: m,
            workers,
            max_branch_tokens: 40,
            sampling: SamplingConfig {
                seed: 17,
                max_new_tokens: 40,
                ..SamplingConfig::default()
            },
            ..PairBuilderConfig::new(thresholds(0.2))
        }
    }

    fn reward() -> McReward {
        McReward::new(RewardConfig {
            rollout_max_tokens: 40,
            ..RewardConfig::default()
        })
    }

    #[test]
    fn dataset_accounting_order_and_invariants() {
        let ps = problems(12);
        let policy = GoldPolicy::new(5.0);
        let attempts = build_attempts(&policy, &reward(), &ps, &config(2, 1)).unwrap();
        let ds = dataset_from_attempts(&attempts, ps.len(), 2);
        assert_eq!(ds.report.n_built + ds.report.total_skips(), 24);
        assert!(ds.report.n_built > 0);
        let mut built = ds.triplets.iter();
        for (job, a) in attempts.iter().enumerate() {
            assert_eq!((a.prompt_index, a.sample_index), (job / 2, job % 2));
            if let Outcome::Built(t) = &a.outcome {
                assert_eq!(built.next(), Some(&**t));
                assert!(t.chosen_score > t.rejected_score);
                assert_ne!(t.chosen_tokens, t.rejected_tokens);
                assert_eq!(t.s_init_tokens, a.sample.generated_tokens[..t.branch_index]);
                let min = a.sample.confidences[t.branch_index];
                assert!(a.sample.confidences[..t.branch_index].iter().all(|&c| c > min));
                for seg in [&t.chosen_tokens, &t.rejected_tokens] {
                    assert!(!seg.is_empty() && seg.len() <= 40);
                }
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_bytes_and_jsonl_round_trips() {
        let ps = problems(8);
        let policy = GoldPolicy::new(5.0);
        let one = build_dataset(&policy, &reward(), &ps, &config(2, 1)).unwrap();
        let three = build_dataset(&policy, &reward(), &ps, &config(2, 3)).unwrap();
        assert_eq!(
            jsonl::to_bytes(&one.triplets).unwrap(),
            jsonl::to_bytes(&three.triplets).unwrap()
        );
        let dir = tempfile::tempdir().unwrap();
        let files = write_dataset(&one, dir.path()).unwrap();
        assert_eq!(read_pairs(&files.pairs).unwrap(), one.triplets);
        let report: BuildReport = jsonl::read_json(&files.report).unwrap();
        assert_eq!(report, one.report);
    }

    #[test]
    fn single_sample_dataset_is_a_subset() {
        let ps = problems(8);
        let policy = GoldPolicy::new(5.0);
        let m1 = build_dataset(&policy, &reward(), &ps, &config(1, 1)).unwrap();
        let m3 = build_dataset(&policy, &reward(), &ps, &config(3, 1)).unwrap();
        assert!(m1.triplets.iter().all(|t| m3.triplets.contains(t)));
        assert!(!m1.triplets.is_empty() && m3.triplets.len() <= 3 * ps.len());
    }

    #[test]
    fn resegmentation_cuts_at_lowest_probability() {
        let tok = Tokenizer::new();
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            context_len: 96,
            seed: 4,
            ..ModelConfig::default()
        };
        let ckpt = Checkpoint::init(&cfg, &tok).unwrap();
        let model = ckpt.model::<f64>().unwrap();
        let p = ProblemInstance::from_expression("((3+5)*2)").unwrap();
        let full = render_solution(&p);
        let x = tok.prompt_tokens(&p.expression).unwrap();
        let (lp, _) = sequence_logprob(&model, &x, &tok.encode(&full).unwrap()).unwrap();
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let m = min_confidence_index(&probs);
        // an init ending at its own minimum loses at least that token
        let init_text = &full[..=m];
        let pair = ExternalPair {
            prompt: p.expression.clone(),
            init_text: init_text.to_string(),
            chosen_text: "8*2=16\n#### 16".to_string(),
            rejected_text: "9\n#### 9".to_string(),
        };
        let loose = resegment_external_pairs(&model, "m", &[pair.clone()], &thresholds(0.0)).unwrap();
        assert_eq!(loose[0].s_init_tokens.len(), m);
        assert!(loose[0].s_init_tokens.len() < init_text.len());
        assert_eq!(loose[0].stop_rejected, StopReason::Eos);
        assert_eq!(*loose[0].rejected_tokens.last().unwrap(), EOS);
        let tight = resegment_external_pairs(&model, "m", &[pair], &thresholds(1.0)).unwrap();
        assert_eq!(tight[0].chosen_tokens.len(), 2);
        assert_eq!(tight[0].stop_chosen, StopReason::BelowTauStop);
        assert_eq!((tight[0].chosen_score, tight[0].rejected_score), (1.0, 0.0));
    }
}
