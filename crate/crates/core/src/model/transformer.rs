//! Decoder-only transformer with hand-written backward pass.
//!
//! Pre-norm blocks (`x + attn(ln1(x))`, `x + mlp(ln2(x))`), learned token and
//! position embeddings, tanh-GELU MLP, untied output head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{LayerOffsets, ModelConfig, ParamLayout};
use super::scalar::{gemm, Scalar, View};
use crate::corpus::TokenId;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Sequences concatenated row-wise, each attending only to itself, plus the
/// positions whose next-token log-probabilities are requested.
#[derive(Debug, Clone, Default)]
pub struct PackedBatch {
    pub tokens: Vec<TokenId>,
    /// `(start row, length)` of every sequence.
    pub seqs: Vec<(usize, usize)>,
    pub targets: Vec<Target>,
}

/// Log-probability of `token` under the distribution predicted at `row`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub row: usize,
    pub token: TokenId,
}

impl PackedBatch {
    /// Appends a sequence and scores every token from `score_from` on.
    /// Returns the index range of the new targets.
    pub fn push(&mut self, tokens: &[TokenId], score_from: usize) -> std::ops::Range<usize> {
        assert!(score_from >= 1 || tokens.is_empty(), "the first token has no prediction");
        let start = self.tokens.len();
        self.tokens.extend_from_slice(tokens);
        self.seqs.push((start, tokens.len()));
        let first = self.targets.len();
        for p in score_from..tokens.len() {
            self.targets.push(Target {
                row: start + p - 1,
                token: tokens[p],
            });
        }
        first..self.targets.len()
    }

    /// Context followed by a segment; only segment tokens are scored.
    pub fn push_segment(&mut self, context: &[TokenId], segment: &[TokenId]) -> std::ops::Range<usize> {
        let mut seq = Vec::with_capacity(context.len() + segment.len());
        seq.extend_from_slice(context);
        seq.extend_from_slice(segment);
        self.push(&seq, context.len())
    }

    pub fn rows(&self) -> usize {
        self.tokens.len()
    }
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    fc: Vec<T>,
    act: Vec<T>,
}

/// Activations kept for the backward pass.
pub struct ForwardPass<T> {
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    hf: Vec<T>,
    /// `[rows, vocab]` output logits.
    pub logits: Vec<T>,
    /// Natural-log probability of each target, in target order.
    pub logprobs: Vec<f64>,
}

/// Per-sequence attention state for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
}

impl<T> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone)]
pub struct Transformer<T: Scalar> {
    cfg: ModelConfig,
    layout: ParamLayout,
    params: Vec<T>,
}

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::of(0.044715) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::of(0.044715) * x * x * x);
    let t = inner.tanh();
    T::of(0.5) * (T::one() + t)
        + T::of(0.5) * x * (T::one() - t * t) * c * (T::one() + T::of(3.0 * 0.044715) * x * x)
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], n: usize, d: usize) -> (Vec<T>, LnCache<T>) {
    let mut out = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut rstd = vec![T::zero(); n];
    let inv_d = T::of(1.0 / d as f64);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat[r * d + c] = xh;
            out[r * d + c] = xh * gain[c] + bias[c];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Accumulates gain/bias grads and adds the input gradient into `dx`.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
    n: usize,
    d: usize,
) {
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for c in 0..d {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rs = cache.rstd[r];
        for c in 0..d {
            dx[r * d + c] += rs * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

impl<T: Scalar> Transformer<T> {
    /// Freshly initialized model; weights are drawn in `f32` from `cfg.seed`
    /// so that `f32` and `f64` instances of the same config agree.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        let weights = init_weights(cfg)?;
        Self::from_weights(cfg, &weights)
    }

    pub fn from_weights(cfg: &ModelConfig, weights: &[f32]) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg);
        if weights.len() != layout.total {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {} weights, found {}",
                layout.total,
                weights.len()
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            layout,
            params: weights.iter().map(|&w| T::of(w as f64)).collect(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn to_f32_weights(&self) -> Vec<f32> {
        self.params.iter().map(|p| p.as_f64() as f32).collect()
    }

    fn slice(&self, offset: usize, len: usize) -> &[T] {
        &self.params[offset..offset + len]
    }

    /// `y[n, out] = x[n, in] · W + b`.
    fn linear(&self, x: &[T], n: usize, w: usize, b: usize, d_in: usize, d_out: usize) -> Vec<T> {
        let bias = self.slice(b, d_out);
        let mut y = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            y.extend_from_slice(bias);
        }
        gemm(
            n,
            d_in,
            d_out,
            T::one(),
            x,
            View::rows(0, d_in),
            &self.params,
            View::rows(w, d_out),
            T::one(),
            &mut y,
            View::rows(0, d_out),
        );
        y
    }

    /// Accumulates `dW += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·Wᵀ`.
    #[allow(clippy::too_many_arguments)]
    fn linear_backward(
        &self,
        x: &[T],
        dy: &[T],
        n: usize,
        w: usize,
        b: usize,
        d_in: usize,
        d_out: usize,
        grads: &mut [T],
    ) -> Vec<T> {
        gemm(
            d_in,
            n,
            d_out,
            T::one(),
            x,
            View::transposed(0, d_in),
            dy,
            View::rows(0, d_out),
            T::one(),
            grads,
            View::rows(w, d_out),
        );
        for r in 0..n {
            for c in 0..d_out {
                grads[b + c] += dy[r * d_out + c];
            }
        }
        let mut dx = vec![T::zero(); n * d_in];
        gemm(
            n,
            d_out,
            d_in,
            T::one(),
            dy,
            View::rows(0, d_out),
            &self.params,
            View::transposed(w, d_out),
            T::zero(),
            &mut dx,
            View::rows(0, d_in),
        );
        dx
    }

    fn check_batch(&self, batch: &PackedBatch) -> Result<()> {
        for &(_, len) in &batch.seqs {
            if len > self.cfg.context_len {
                return Err(Error::ContextOverflow {
                    len,
                    context_len: self.cfg.context_len,
                });
            }
        }
        let v = self.cfg.vocab_size as TokenId;
        if batch.tokens.iter().any(|&t| t >= v) || batch.targets.iter().any(|t| t.token >= v) {
            return Err(Error::InvalidConfig("token id outside the vocabulary".into()));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &PackedBatch) -> Result<ForwardPass<T>> {
        self.check_batch(batch)?;
        let cfg = &self.cfg;
        let (n, d, v) = (batch.rows(), cfg.d_model, cfg.vocab_size);
        let (nh, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = T::of(1.0 / (hd as f64).sqrt());

        let mut x = vec![T::zero(); n * d];
        for &(start, len) in &batch.seqs {
            for p in 0..len {
                let row = start + p;
                let tok = batch.tokens[row] as usize;
                let te = self.slice(self.layout.tok_emb + tok * d, d);
                let pe = self.slice(self.layout.pos_emb + p * d, d);
                for c in 0..d {
                    x[row * d + c] = te[c] + pe[c];
                }
            }
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &self.layout.layers {
            let (h1, ln1) = layer_norm(&x, self.slice(lo.ln1_g, d), self.slice(lo.ln1_b, d), n, d);
            let qkv = self.linear(&h1, n, lo.w_qkv, lo.b_qkv, d, 3 * d);
            let probs_len: usize = batch.seqs.iter().map(|&(_, l)| nh * l * l).sum();
            let mut probs = vec![T::zero(); probs_len];
            let mut attn = vec![T::zero(); n * d];
            let mut p_off = 0;
            for &(start, len) in &batch.seqs {
                for h in 0..nh {
                    let q = start * 3 * d + h * hd;
                    let k = q + d;
                    let vv = q + 2 * d;
                    let p = &mut probs[p_off..p_off + len * len];
                    gemm(
                        len,
                        hd,
                        len,
                        scale,
                        &qkv,
                        View::rows(q, 3 * d),
                        &qkv,
                        View::transposed(k, 3 * d),
                        T::zero(),
                        p,
                        View::rows(0, len),
                    );
                    for i in 0..len {
                        let row = &mut p[i * len..(i + 1) * len];
                        softmax_in_place(&mut row[..=i]);
                        row[i + 1..].iter_mut().for_each(|z| *z = T::zero());
                    }
                    gemm(
                        len,
                        len,
                        hd,
                        T::one(),
                        p,
                        View::rows(0, len),
                        &qkv,
                        View::rows(vv, 3 * d),
                        T::zero(),
                        &mut attn,
                        View::rows(start * d + h * hd, d),
                    );
                    p_off += len * len;
                }
            }
            let a = self.linear(&attn, n, lo.w_o, lo.b_o, d, d);
            for (xi, ai) in x.iter_mut().zip(&a) {
                *xi += *ai;
            }
            let (h2, ln2) = layer_norm(&x, self.slice(lo.ln2_g, d), self.slice(lo.ln2_b, d), n, d);
            let fc = self.linear(&h2, n, lo.w_fc, lo.b_fc, d, cfg.d_ff);
            let act: Vec<T> = fc.iter().map(|&z| gelu(z)).collect();
            let m = self.linear(&act, n, lo.w_proj, lo.b_proj, cfg.d_ff, d);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += *mi;
            }
            layers.push(LayerCache {
                ln1,
                h1,
                qkv,
                probs,
                attn,
                ln2,
                h2,
                fc,
                act,
            });
        }

        let (hf, lnf) = layer_norm(
            &x,
            self.slice(self.layout.lnf_g, d),
            self.slice(self.layout.lnf_b, d),
            n,
            d,
        );
        let logits = self.linear(&hf, n, self.layout.w_head, self.layout.b_head, d, v);
        let logprobs = batch
            .targets
            .iter()
            .map(|t| {
                let row = &logits[t.row * v..(t.row + 1) * v];
                log_softmax_at(row, t.token as usize)
            })
            .collect();
        Ok(ForwardPass {
            layers,
            lnf,
            hf,
            logits,
            logprobs,
        })
    }

    /// Gradient of an objective with respect to all parameters, given the
    /// objective's derivative with respect to each target log-probability.
    pub fn backward(&self, batch: &PackedBatch, fwd: &ForwardPass<T>, target_grads: &[f64]) -> Vec<T> {
        assert_eq!(target_grads.len(), batch.targets.len());
        let cfg = &self.cfg;
        let (n, d, v, f) = (batch.rows(), cfg.d_model, cfg.vocab_size, cfg.d_ff);
        let (nh, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut grads = vec![T::zero(); self.layout.total];

        // dlogp/dz = onehot - softmax(z)
        let mut dlogits = vec![T::zero(); n * v];
        let mut probs = vec![T::zero(); v];
        for (t, &g) in batch.targets.iter().zip(target_grads) {
            if g == 0.0 {
                continue;
            }
            let g = T::of(g);
            probs.copy_from_slice(&fwd.logits[t.row * v..(t.row + 1) * v]);
            softmax_in_place(&mut probs);
            let drow = &mut dlogits[t.row * v..(t.row + 1) * v];
            for c in 0..v {
                drow[c] -= g * probs[c];
            }
            drow[t.token as usize] += g;
        }

        let dhf = self.linear_backward(&fwd.hf, &dlogits, n, self.layout.w_head, self.layout.b_head, d, v, &mut grads);
        let mut dx = vec![T::zero(); n * d];
        {
            let (dg, db) = split_pair(&mut grads, self.layout.lnf_g, self.layout.lnf_b, d);
            layer_norm_backward(&dhf, &fwd.lnf, self.slice(self.layout.lnf_g, d), dg, db, &mut dx, n, d);
        }

        for (lo, cache) in self.layout.layers.iter().zip(&fwd.layers).rev() {
            let lo: &LayerOffsets = lo;
            // MLP branch
            let dact = self.linear_backward(&cache.act, &dx, n, lo.w_proj, lo.b_proj, f, d, &mut grads);
            let dfc: Vec<T> = dact.iter().zip(&cache.fc).map(|(&g, &z)| g * gelu_grad(z)).collect();
            let dh2 = self.linear_backward(&cache.h2, &dfc, n, lo.w_fc, lo.b_fc, d, f, &mut grads);
            {
                let (dg, db) = split_pair(&mut grads, lo.ln2_g, lo.ln2_b, d);
                layer_norm_backward(&dh2, &cache.ln2, self.slice(lo.ln2_g, d), dg, db, &mut dx, n, d);
            }

            // attention branch
            let dattn = self.linear_backward(&cache.attn, &dx, n, lo.w_o, lo.b_o, d, d, &mut grads);
            let mut dqkv = vec![T::zero(); n * 3 * d];
            let mut p_off = 0;
            for &(start, len) in &batch.seqs {
                let mut dp = vec![T::zero(); len * len];
                for h in 0..nh {
                    let q = start * 3 * d + h * hd;
                    let k = q + d;
                    let vv = q + 2 * d;
                    let o = start * d + h * hd;
                    let p = &cache.probs[p_off..p_off + len * len];
                    // dP = dO · Vᵀ
                    gemm(
                        len,
                        hd,
                        len,
                        T::one(),
                        &dattn,
                        View::rows(o, d),
                        &cache.qkv,
                        View::transposed(vv, 3 * d),
                        T::zero(),
                        &mut dp,
                        View::rows(0, len),
                    );
                    // dV = Pᵀ · dO
                    gemm(
                        len,
                        len,
                        hd,
                        T::one(),
                        p,
                        View::transposed(0, len),
                        &dattn,
                        View::rows(o, d),
                        T::zero(),
                        &mut dqkv,
                        View::rows(vv, 3 * d),
                    );
                    // dS = P ⊙ (dP − rowsum(dP ⊙ P)), scaled
                    for i in 0..len {
                        let pr = &p[i * len..(i + 1) * len];
                        let dr = &mut dp[i * len..(i + 1) * len];
                        let dot: T = (0..=i).map(|j| pr[j] * dr[j]).sum();
                        for j in 0..=i {
                            dr[j] = pr[j] * (dr[j] - dot) * scale;
                        }
                        dr[i + 1..].iter_mut().for_each(|z| *z = T::zero());
                    }
                    // dQ = dS · K, dK = dSᵀ · Q
                    gemm(
                        len,
                        len,
                        hd,
                        T::one(),
                        &dp,
                        View::rows(0, len),
                        &cache.qkv,
                        View::rows(k, 3 * d),
                        T::zero(),
                        &mut dqkv,
                        View::rows(q, 3 * d),
                    );
                    gemm(
                        len,
                        len,
                        hd,
                        T::one(),
                        &dp,
                        View::transposed(0, len),
                        &cache.qkv,
                        View::rows(q, 3 * d),
                        T::zero(),
                        &mut dqkv,
                        View::rows(k, 3 * d),
                    );
                    p_off += len * len;
                }
            }
            let dh1 = self.linear_backward(&cache.h1, &dqkv, n, lo.w_qkv, lo.b_qkv, d, 3 * d, &mut grads);
            {
                let (dg, db) = split_pair(&mut grads, lo.ln1_g, lo.ln1_b, d);
                layer_norm_backward(&dh1, &cache.ln1, self.slice(lo.ln1_g, d), dg, db, &mut dx, n, d);
            }
        }

        for &(start, len) in &batch.seqs {
            for p in 0..len {
                let row = start + p;
                let tok = batch.tokens[row] as usize;
                for c in 0..d {
                    let g = dx[row * d + c];
                    grads[self.layout.tok_emb + tok * d + c] += g;
                    grads[self.layout.pos_emb + p * d + c] += g;
                }
            }
        }
        grads
    }

    /// Logits at every position of one sequence.
    pub fn forward_logits(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        let mut batch = PackedBatch::default();
        batch.push(tokens, tokens.len());
        let fwd = self.forward(&batch)?;
        let v = self.cfg.vocab_size;
        Ok(fwd
            .logits
            .chunks(v)
            .map(|r| r.iter().map(|z| z.as_f64()).collect())
            .collect())
    }

    pub fn new_cache(&self) -> KvCache<T> {
        let cap = self.cfg.context_len * self.cfg.d_model;
        KvCache {
            k: (0..self.cfg.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            v: (0..self.cfg.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            len: 0,
        }
    }

    /// Feeds one token and returns the next-token logits.
    pub fn step(&self, cache: &mut KvCache<T>, token: TokenId) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        if cache.len >= cfg.context_len {
            return Err(Error::ContextOverflow {
                len: cache.len + 1,
                context_len: cfg.context_len,
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::InvalidConfig(format!("token id {token} outside the vocabulary")));
        }
        let (d, nh, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let pos = cache.len;
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let te = self.slice(self.layout.tok_emb + token as usize * d, d);
        let pe = self.slice(self.layout.pos_emb + pos * d, d);
        let mut x: Vec<T> = te.iter().zip(pe).map(|(&a, &b)| a + b).collect();
        let t = pos + 1;
        let mut scores = vec![T::zero(); t];
        for (l, lo) in self.layout.layers.iter().enumerate() {
            let (h1, _) = layer_norm(&x, self.slice(lo.ln1_g, d), self.slice(lo.ln1_b, d), 1, d);
            let qkv = self.linear(&h1, 1, lo.w_qkv, lo.b_qkv, d, 3 * d);
            cache.k[l].extend_from_slice(&qkv[d..2 * d]);
            cache.v[l].extend_from_slice(&qkv[2 * d..3 * d]);
            let (ks, vs) = (&cache.k[l], &cache.v[l]);
            let mut attn = vec![T::zero(); d];
            for h in 0..nh {
                let q = &qkv[h * hd..(h + 1) * hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &ks[j * d + h * hd..j * d + (h + 1) * hd];
                    *s = q.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                softmax_in_place(&mut scores);
                let out = &mut attn[h * hd..(h + 1) * hd];
                for (j, &p) in scores.iter().enumerate() {
                    let vj = &vs[j * d + h * hd..j * d + (h + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += p * vv;
                    }
                }
            }
            let a = self.linear(&attn, 1, lo.w_o, lo.b_o, d, d);
            for (xi, ai) in x.iter_mut().zip(&a) {
                *xi += *ai;
            }
            let (h2, _) = layer_norm(&x, self.slice(lo.ln2_g, d), self.slice(lo.ln2_b, d), 1, d);
            let mut fc = self.linear(&h2, 1, lo.w_fc, lo.b_fc, d, cfg.d_ff);
            fc.iter_mut().for_each(|z| *z = gelu(*z));
            let m = self.linear(&fc, 1, lo.w_proj, lo.b_proj, cfg.d_ff, d);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += *mi;
            }
        }
        cache.len += 1;
        let (hf, _) = layer_norm(
            &x,
            self.slice(self.layout.lnf_g, d),
            self.slice(self.layout.lnf_b, d),
            1,
            d,
        );
        let logits = self.linear(&hf, 1, self.layout.w_head, self.layout.b_head, d, cfg.vocab_size);
        Ok(logits.into_iter().map(|z| z.as_f64()).collect())
    }
}

fn log_softmax_at<T: Scalar>(row: &[T], index: usize) -> f64 {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    (row[index] - lse).as_f64()
}

fn split_pair<T>(grads: &mut [T], a: usize, b: usize, len: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + len <= b);
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[a..a + len], &mut hi[..len])
}

/// Initial weights: N(0, 0.02) matrices and embeddings, residual projections
/// shrunk by `1/sqrt(2·layers)`, unit norm gains, zero biases.
pub fn init_weights(cfg: &ModelConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    let layout = ParamLayout::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = vec![0.0f32; layout.total];
    let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
    for t in &layout.tensors {
        let len: usize = t.shape.iter().product();
        let slot = &mut w[t.offset..t.offset + len];
        let name = t.name.as_str();
        if name.ends_with(".gain") {
            slot.fill(1.0);
        } else if t.shape.len() == 2 {
            let std = if name.ends_with("w_o") || name.ends_with("w_proj") {
                resid_std
            } else {
                INIT_STD
            };
            let normal = Normal::new(0.0, std).expect("valid std");
            slot.iter_mut().for_each(|x| *x = normal.sample(&mut rng) as f32);
        }
    }
    Ok(w)
}
