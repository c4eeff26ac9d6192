use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            context_len: 256,
            vocab_size: crate::corpus::Tokenizer::new().vocab_size(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.context_len == 0 || self.vocab_size < 2 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Name, offset and shape of one tensor inside the flat weight array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

/// Placement of every tensor in the flat weight array. Matrices are row-major
/// `[in, out]` so a layer computes `x · W + b`.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) w_head: usize,
    pub(crate) b_head: usize,
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            tensors.push(TensorInfo { name, offset, shape });
            offset
        };
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let tok_emb = push("tok_emb".into(), vec![v, d]);
        let pos_emb = push("pos_emb".into(), vec![cfg.context_len, d]);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: push(format!("layer{l}.ln1.gain"), vec![d]),
                ln1_b: push(format!("layer{l}.ln1.bias"), vec![d]),
                w_qkv: push(format!("layer{l}.attn.w_qkv"), vec![d, 3 * d]),
                b_qkv: push(format!("layer{l}.attn.b_qkv"), vec![3 * d]),
                w_o: push(format!("layer{l}.attn.w_o"), vec![d, d]),
                b_o: push(format!("layer{l}.attn.b_o"), vec![d]),
                ln2_g: push(format!("layer{l}.ln2.gain"), vec![d]),
                ln2_b: push(format!("layer{l}.ln2.bias"), vec![d]),
                w_fc: push(format!("layer{l}.mlp.w_fc"), vec![d, f]),
                b_fc: push(format!("layer{l}.mlp.b_fc"), vec![f]),
                w_proj: push(format!("layer{l}.mlp.w_proj"), vec![f, d]),
                b_proj: push(format!("layer{l}.mlp.b_proj"), vec![d]),
            })
            .collect();
        let lnf_g = push("ln_f.gain".into(), vec![d]);
        let lnf_b = push("ln_f.bias".into(), vec![d]);
        let w_head = push("head.w".into(), vec![d, v]);
        let b_head = push("head.b".into(), vec![v]);
        ParamLayout {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            w_head,
            b_head,
            tensors,
            total,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let cfg = ModelConfig::default();
        let layout = ParamLayout::new(&cfg);
        let mut expect = 0;
        for t in &layout.tensors {
            assert_eq!(t.offset, expect, "{}", t.name);
            expect += t.shape.iter().product::<usize>();
        }
        assert_eq!(expect, layout.total);
        assert_eq!(layout.tensor("head.b").unwrap().shape, vec![cfg.vocab_size]);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig { d_model: 30, n_heads: 4, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
