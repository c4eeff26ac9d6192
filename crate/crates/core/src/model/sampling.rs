//! Policy interface, temperature sampling with confidence recording, and
//! teacher-forced scoring.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::transformer::{KvCache, PackedBatch, Transformer};
use crate::corpus::{TokenId, EOS};
use crate::error::{Error, Result};

/// Autoregressive next-token distribution with incremental state.
///
/// Implemented by [`Transformer`] and by scripted policies in tests.
pub trait LanguageModel: Sync {
    type State: Clone + Send;

    fn vocab_size(&self) -> usize;
    fn context_len(&self) -> usize;
    fn model_id(&self) -> String;

    /// Feeds `tokens` from scratch and returns the state plus next-token logits.
    fn prefill(&self, tokens: &[TokenId]) -> Result<(Self::State, Vec<f64>)>;

    /// Feeds one more token and returns the next-token logits.
    fn extend(&self, state: &mut Self::State, token: TokenId) -> Result<Vec<f64>>;

    /// Number of tokens consumed so far.
    fn state_len(&self, state: &Self::State) -> usize;
}

/// A [`Transformer`] tagged with an identifier for provenance records.
#[derive(Debug, Clone)]
pub struct Policy<T: Scalar> {
    pub model: Transformer<T>,
    pub id: String,
}

impl<T: Scalar> LanguageModel for Policy<T> {
    type State = KvCache<T>;

    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn context_len(&self) -> usize {
        self.model.config().context_len
    }

    fn model_id(&self) -> String {
        self.id.clone()
    }

    fn prefill(&self, tokens: &[TokenId]) -> Result<(KvCache<T>, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(Error::EmptySegment);
        }
        if tokens.len() > self.context_len() {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                context_len: self.context_len(),
            });
        }
        let mut cache = self.model.new_cache();
        let mut logits = Vec::new();
        for &t in tokens {
            logits = self.model.step(&mut cache, t)?;
        }
        Ok((cache, logits))
    }

    fn extend(&self, state: &mut KvCache<T>, token: TokenId) -> Result<Vec<f64>> {
        self.model.step(state, token)
    }

    fn state_len(&self, state: &KvCache<T>) -> usize {
        state.len()
    }
}

/// Which distribution a recorded confidence refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Probability under `softmax(logits / temperature)`, the distribution actually sampled.
    #[default]
    PostTemperature,
    /// Probability under `softmax(logits)`.
    PreTemperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Argmax decoding (the zero-temperature limit); confidences are then the
    /// maximum of `softmax(logits)`.
    pub greedy: bool,
    pub confidence: ConfidenceMode,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_new_tokens: 96,
            seed: 0,
            greedy: false,
            confidence: ConfidenceMode::PostTemperature,
        }
    }
}

impl SamplingConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            greedy: true,
            max_new_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "EOS")]
    Eos,
    #[serde(rename = "BelowTauStop")]
    BelowTauStop,
    #[serde(rename = "MaxLen")]
    MaxLen,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Eos => "EOS",
            StopReason::BelowTauStop => "BelowTauStop",
            StopReason::MaxLen => "MaxLen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSequence {
    pub prompt_tokens: Vec<TokenId>,
    pub generated_tokens: Vec<TokenId>,
    pub confidences: Vec<f64>,
    pub stopped_by: StopReason,
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    p
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Picks the next token from `logits` and returns it with its confidence.
pub fn choose_token<R: Rng + ?Sized>(logits: &[f64], cfg: &SamplingConfig, rng: &mut R) -> (TokenId, f64) {
    if cfg.greedy {
        let p = softmax(logits, 1.0);
        let i = argmax(logits);
        return (i as TokenId, p[i]);
    }
    let p = softmax(logits, cfg.temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = p.len() - 1;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            chosen = i;
            break;
        }
    }
    // never pick a zero-probability token through rounding at the tail
    while p[chosen] == 0.0 && chosen > 0 {
        chosen -= 1;
    }
    let conf = match cfg.confidence {
        ConfidenceMode::PostTemperature => p[chosen],
        ConfidenceMode::PreTemperature => softmax(logits, 1.0)[chosen],
    };
    (chosen as TokenId, conf)
}

/// Continues generation from an existing state. `logits` are the next-token
/// logits for that state. `stop` sees each sampled token and its confidence
/// and returns true to end generation after that token.
pub fn continue_generation<M, R>(
    model: &M,
    state: &mut M::State,
    mut logits: Vec<f64>,
    cfg: &SamplingConfig,
    max_new: usize,
    rng: &mut R,
    mut stop: impl FnMut(TokenId, f64) -> bool,
) -> Result<(Vec<TokenId>, Vec<f64>, StopReason)>
where
    M: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    let mut tokens = Vec::new();
    let mut confs = Vec::new();
    loop {
        if tokens.len() >= max_new {
            return Ok((tokens, confs, StopReason::MaxLen));
        }
        let (tok, conf) = choose_token(&logits, cfg, rng);
        tokens.push(tok);
        confs.push(conf);
        if tok == EOS {
            return Ok((tokens, confs, StopReason::Eos));
        }
        if stop(tok, conf) {
            return Ok((tokens, confs, StopReason::BelowTauStop));
        }
        if tokens.len() >= max_new || model.state_len(state) >= model.context_len() {
            return Ok((tokens, confs, StopReason::MaxLen));
        }
        logits = model.extend(state, tok)?;
    }
}

/// Samples a completion of `prompt`, recording the confidence of each
/// sampled token. Stops at EOS, `max_new_tokens`, or a full context window.
pub fn sample<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    cfg: &SamplingConfig,
) -> Result<SampledSequence> {
    let mut rng = crate::rng::stream(cfg.seed, &[]);
    sample_with(model, prompt, cfg, &mut rng)
}

pub fn sample_with<M: LanguageModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<SampledSequence> {
    cfg.validate()?;
    let (mut state, logits) = model.prefill(prompt)?;
    let (generated_tokens, confidences, stopped_by) =
        continue_generation(model, &mut state, logits, cfg, cfg.max_new_tokens, rng, |_, _| false)?;
    Ok(SampledSequence {
        prompt_tokens: prompt.to_vec(),
        generated_tokens,
        confidences,
        stopped_by,
    })
}

/// Teacher-forced log-probabilities of `segment` given `context` at
/// temperature 1. Returns per-token values and their sum.
pub fn sequence_logprob<T: Scalar>(
    model: &Transformer<T>,
    context: &[TokenId],
    segment: &[TokenId],
) -> Result<(Vec<f64>, f64)> {
    if segment.is_empty() {
        return Err(Error::EmptySegment);
    }
    if context.is_empty() {
        return Err(Error::InvalidConfig("context must contain at least one token".into()));
    }
    let mut batch = PackedBatch::default();
    batch.push_segment(context, segment);
    let fwd = model.forward(&batch)?;
    let sum = fwd.logprobs.iter().sum();
    Ok((fwd.logprobs, sum))
}

/// The `k` highest-logit next tokens after `prefix`, descending by logit,
/// ties by ascending token id.
pub fn top_k_from_logits(logits: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i as TokenId, logits[i])).collect()
}
