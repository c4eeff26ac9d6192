//! Token-level reward `R(x, s_init, v)`: the value of committing to token `v`
//! after the shared prefix. The default implementation estimates it as the
//! fraction of policy rollouts from that point that reach the right answer.

use serde::{Deserialize, Serialize};

use crate::corpus::{render_solution, verify_answer, ProblemInstance, TokenId, Tokenizer, EOS};
use crate::error::{Error, Result};
use crate::model::{continue_generation, LanguageModel, SamplingConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub n_rollouts: usize,
    pub rollout_temperature: f64,
    pub rollout_max_tokens: usize,
    pub seed: u64,
    /// Greedy rollouts; with one rollout this makes the reward deterministic
    /// in the policy alone.
    pub greedy: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 4,
            rollout_temperature: 0.7,
            rollout_max_tokens: 96,
            seed: 0,
            greedy: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rollouts == 0 {
            return Err(Error::InvalidConfig("n_rollouts must be at least 1".into()));
        }
        self.sampling().validate()
    }

    fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.rollout_temperature,
            max_new_tokens: self.rollout_max_tokens.max(1),
            seed: self.seed,
            greedy: self.greedy,
            ..SamplingConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub token: TokenId,
    pub logit: f64,
    pub score: f64,
}

/// Pluggable scorer of branch candidates.
pub trait RewardModel<M: LanguageModel + ?Sized>: Sync {
    /// Scores each candidate independently. `stream` keys the randomness;
    /// candidate `j` must only depend on `(stream, j)`.
    fn score_candidates(
        &self,
        policy: &M,
        problem: &ProblemInstance,
        x_tokens: &[TokenId],
        s_init_tokens: &[TokenId],
        candidates: &[(TokenId, f64)],
        stream: u64,
    ) -> Result<Vec<CandidateScore>>;
}

/// Monte-Carlo correctness probability of rollouts from the candidate.
#[derive(Debug, Clone, Default)]
pub struct McReward {
    pub config: RewardConfig,
}

impl McReward {
    pub fn new(config: RewardConfig) -> Self {
        Self { config }
    }
}

fn rollout_value<M: LanguageModel + ?Sized>(
    policy: &M,
    problem: &ProblemInstance,
    prefix_state: &M::State,
    s_init: &[TokenId],
    candidate: TokenId,
    config: &RewardConfig,
    seed: u64,
) -> Result<f64> {
    let tok = Tokenizer::new();
    let mut head = s_init.to_vec();
    head.push(candidate);
    if candidate == EOS {
        let ok = verify_answer(problem, &tok.completion_text(&head));
        return Ok(if ok { 1.0 } else { 0.0 });
    }
    let sampling = config.sampling();
    let mut passed = 0usize;
    let mut state = prefix_state.clone();
    let logits = policy.extend(&mut state, candidate)?;
    for r in 0..config.n_rollouts {
        let mut rstate = state.clone();
        let mut rrng = rng::stream(seed, &[r as u64]);
        let (gen, _, _) = continue_generation(
            policy,
            &mut rstate,
            logits.clone(),
            &sampling,
            config.rollout_max_tokens,
            &mut rrng,
            |_, _| false,
        )?;
        let mut completion = head.clone();
        completion.extend(gen);
        if verify_answer(problem, &tok.completion_text(&completion)) {
            passed += 1;
        }
    }
    Ok(passed as f64 / config.n_rollouts as f64)
}

/// Fraction of `config.n_rollouts` continuations of `(x, s_init, candidate)`
/// whose final answer verifies. Deterministic given `config.seed`.
pub fn mc_reward<M: LanguageModel + ?Sized>(
    policy: &M,
    problem: &ProblemInstance,
    x_tokens: &[TokenId],
    s_init_tokens: &[TokenId],
    candidate: TokenId,
    config: &RewardConfig,
) -> Result<f64> {
    config.validate()?;
    let mut prefix = x_tokens.to_vec();
    prefix.extend_from_slice(s_init_tokens);
    let (state, _) = policy.prefill(&prefix)?;
    rollout_value(policy, problem, &state, s_init_tokens, candidate, config, config.seed)
}

impl<M: LanguageModel + ?Sized> RewardModel<M> for McReward {
    fn score_candidates(
        &self,
        policy: &M,
        problem: &ProblemInstance,
        x_tokens: &[TokenId],
        s_init_tokens: &[TokenId],
        candidates: &[(TokenId, f64)],
        stream: u64,
    ) -> Result<Vec<CandidateScore>> {
        self.config.validate()?;
        let mut prefix = x_tokens.to_vec();
        prefix.extend_from_slice(s_init_tokens);
        let (state, _) = policy.prefill(&prefix)?;
        candidates
            .iter()
            .enumerate()
            .map(|(j, &(token, logit))| {
                let seed = rng::derive_seed(stream, &[j as u64]);
                let score = rollout_value(policy, problem, &state, s_init_tokens, token, &self.config, seed)?;
                Ok(CandidateScore { token, logit, score })
            })
            .collect()
    }
}

/// 1 if `s_init + candidate` is a prefix of the gold worked solution
/// (followed by EOS), else 0. A cheap, policy-independent comparison point.
#[derive(Debug, Clone, Copy, Default)]
pub struct GoldPrefixReward;

impl<M: LanguageModel + ?Sized> RewardModel<M> for GoldPrefixReward {
    fn score_candidates(
        &self,
        _policy: &M,
        problem: &ProblemInstance,
        _x_tokens: &[TokenId],
        s_init_tokens: &[TokenId],
        candidates: &[(TokenId, f64)],
        _stream: u64,
    ) -> Result<Vec<CandidateScore>> {
        let tok = Tokenizer::new();
        let mut gold = tok.encode(&render_solution(problem))?;
        gold.push(EOS);
        Ok(candidates
            .iter()
            .map(|&(token, logit)| {
                let n = s_init_tokens.len();
                let ok = gold.len() > n && gold[..n] == *s_init_tokens && gold[n] == token;
                CandidateScore {
                    token,
                    logit,
                    score: if ok { 1.0 } else { 0.0 },
                }
            })
            .collect())
    }
}

#[cfg(test)]
pub(crate) mod scripted {
    //! Hand-written policies with known behavior.

    use super::*;
    use crate::corpus::SEP;

    /// Puts `margin` logits on the next gold-solution token while the
    /// generated text follows the gold solution; after any deviation it
    /// strongly prefers `after_deviation`.
    #[derive(Clone)]
    pub struct GoldPolicy {
        pub margin: f64,
        pub after_deviation: TokenId,
        pub vocab: usize,
    }

    impl GoldPolicy {
        pub fn new(margin: f64) -> Self {
            Self {
                margin,
                after_deviation: EOS,
                vocab: Tokenizer::new().vocab_size(),
            }
        }

        fn logits_for(&self, seq: &[TokenId]) -> Vec<f64> {
            let tok = Tokenizer::new();
            let mut logits = vec![0.0; self.vocab];
            let Some(sep) = seq.iter().position(|&t| t == SEP) else {
                logits[SEP as usize] = self.margin;
                return logits;
            };
            let expr = tok.decode(&seq[1..sep]);
            let next = ProblemInstance::from_expression(&expr).and_then(|p| {
                let mut gold = tok.encode(&render_solution(&p)).ok()?;
                gold.push(EOS);
                let gen = &seq[sep + 1..];
                (gen.len() < gold.len() && gold[..gen.len()] == *gen).then(|| gold[gen.len()])
            });
            logits[next.unwrap_or(self.after_deviation) as usize] = self.margin;
            logits
        }
    }

    impl LanguageModel for GoldPolicy {
        type State = Vec<TokenId>;

        fn vocab_size(&self) -> usize {
            self.vocab
        }
        fn context_len(&self) -> usize {
            256
        }
        fn model_id(&self) -> String {
            "gold".into()
        }
        fn prefill(&self, tokens: &[TokenId]) -> Result<(Vec<TokenId>, Vec<f64>)> {
            Ok((tokens.to_vec(), self.logits_for(tokens)))
        }
        fn extend(&self, state: &mut Vec<TokenId>, token: TokenId) -> Result<Vec<f64>> {
            state.push(token);
            if state.len() > self.context_len() {
                return Err(Error::ContextOverflow {
                    len: state.len(),
                    context_len: self.context_len(),
                });
            }
            Ok(self.logits_for(state))
        }
        fn state_len(&self, state: &Vec<TokenId>) -> usize {
            state.len()
        }
    }

    /// Always emits EOS immediately.
    #[derive(Clone)]
    pub struct EosPolicy;

    impl LanguageModel for EosPolicy {
        type State = usize;
        fn vocab_size(&self) -> usize {
            Tokenizer::new().vocab_size()
        }
        fn context_len(&self) -> usize {
            256
        }
        fn model_id(&self) -> String {
            "eos".into()
        }
        fn prefill(&self, tokens: &[TokenId]) -> Result<(usize, Vec<f64>)> {
            let mut l = vec![0.0; self.vocab_size()];
            l[EOS as usize] = 50.0;
            Ok((tokens.len(), l))
        }
        fn extend(&self, state: &mut usize, _token: TokenId) -> Result<Vec<f64>> {
            *state += 1;
            let mut l = vec![0.0; self.vocab_size()];
            l[EOS as usize] = 50.0;
            Ok(l)
        }
        fn state_len(&self, state: &usize) -> usize {
            *state
        }
    }
}

#[cfg(test)]
mod tests {
    use super::scripted::*;
    use super::*;

    fn problem() -> ProblemInstance {
        ProblemInstance::from_expression("((3+5)*2)").unwrap()
    }

    fn cfg(n: usize, greedy: bool) -> RewardConfig {
        RewardConfig {
            n_rollouts: n,
            greedy,
            rollout_max_tokens: 40,
            ..RewardConfig::default()
        }
    }

    #[test]
    fn oracle_policy_scores_one() {
        let tok = Tokenizer::new();
        let p = problem();
        let x = tok.prompt_tokens(&p.expression).unwrap();
        let policy = GoldPolicy::new(40.0);
        let first = tok.token_of('3').unwrap();
        assert_eq!(mc_reward(&policy, &p, &x, &[], first, &cfg(4, false)).unwrap(), 1.0);
    }

    #[test]
    fn eos_policy_scores_zero() {
        let tok = Tokenizer::new();
        let p = problem();
        let x = tok.prompt_tokens(&p.expression).unwrap();
        let c = tok.token_of('7').unwrap();
        assert_eq!(mc_reward(&EosPolicy, &p, &x, &[], c, &cfg(4, false)).unwrap(), 0.0);
        assert_eq!(mc_reward(&EosPolicy, &p, &x, &[], EOS, &cfg(4, false)).unwrap(), 0.0);
        let scores = McReward::new(cfg(3, false))
            .score_candidates(&EosPolicy, &p, &x, &[], &[(c, 1.0), (EOS, 0.5)], 9)
            .unwrap();
        assert!(scores.iter().all(|s| s.score == 0.0));
    }

    #[test]
    fn fraction_of_passing_rollouts() {
        let tok = Tokenizer::new();
        let p = problem();
        let x = tok.prompt_tokens(&p.expression).unwrap();
        let policy = GoldPolicy::new(6.0);
        let c = cfg(4, false);
        let s = mc_reward(&policy, &p, &x, &[], tok.token_of('3').unwrap(), &c).unwrap();
        assert!((s * 4.0).fract() == 0.0 && (0.0..=1.0).contains(&s));
        assert_eq!(s, mc_reward(&policy, &p, &x, &[], tok.token_of('3').unwrap(), &c).unwrap());
    }

    #[test]
    fn planted_candidates_separate_under_greedy_rollouts() {
        let tok = Tokenizer::new();
        let p = problem();
        let x = tok.prompt_tokens(&p.expression).unwrap();
        let s_init = tok.encode("3+5=").unwrap();
        let policy = GoldPolicy::new(30.0);
        let good = tok.token_of('8').unwrap();
        let bad = tok.token_of('9').unwrap();
        let r = McReward::new(cfg(1, true));
        let scores = r
            .score_candidates(&policy, &p, &x, &s_init, &[(bad, 2.0), (good, 1.0)], 0)
            .unwrap();
        assert_eq!(scores[0].token, bad);
        assert_eq!(scores[0].score, 0.0);
        assert_eq!(scores[1].score, 1.0);
    }

    #[test]
    fn eight_candidates_eight_scores_in_order() {
        let tok = Tokenizer::new();
        let p = problem();
        let x = tok.prompt_tokens(&p.expression).unwrap();
        let cands: Vec<(TokenId, f64)> = (4..12).map(|t| (t, -(t as f64))).collect();
        let scores = McReward::new(cfg(2, false))
            .score_candidates(&GoldPolicy::new(5.0), &p, &x, &[], &cands, 3)
            .unwrap();
        assert_eq!(scores.len(), 8);
        for (s, c) in scores.iter().zip(&cands) {
            assert_eq!((s.token, s.logit), *c);
            assert!((s.score * 2.0).fract() == 0.0);
        }
    }

    #[test]
    fn gold_prefix_reward() {
        let tok = Tokenizer::new();
        let p = problem();
        let s_init = tok.encode("3+").unwrap();
        let cands = [(tok.token_of('5').unwrap(), 0.0), (tok.token_of('6').unwrap(), 0.0)];
        let scores = GoldPrefixReward
            .score_candidates(&EosPolicy, &p, &[], &s_init, &cands, 0)
            .unwrap();
        assert_eq!(scores[0].score, 1.0);
        assert_eq!(scores[1].score, 0.0);
    }
}
