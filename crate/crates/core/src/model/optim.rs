use serde::{Deserialize, Serialize};

use super::config::ParamLayout;
use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Schedule {
    /// Linear warmup then cosine decay to zero.
    #[default]
    Cosine,
}

/// Learning rate at `step` (0-based) of a run with `total_steps` updates.
pub fn learning_rate(schedule: Schedule, peak: f64, warmup_ratio: f64, step: usize, total_steps: usize) -> f64 {
    match schedule {
        Schedule::Cosine => {
            let total = total_steps.max(1);
            let warmup = (warmup_ratio * total as f64).ceil() as usize;
            if step < warmup {
                return peak * (step + 1) as f64 / warmup as f64;
            }
            let span = (total - warmup).max(1) as f64;
            let progress = ((step - warmup) as f64 / span).min(1.0);
            peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::of(max_norm / norm);
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay applied to matrices and embeddings only.
pub struct AdamW<T> {
    cfg: AdamWConfig,
    m: Vec<T>,
    v: Vec<T>,
    decay_mask: Vec<bool>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, layout: &ParamLayout) -> Self {
        let mut decay_mask = vec![false; layout.total];
        for t in layout.tensors.iter().filter(|t| t.shape.len() == 2) {
            let len: usize = t.shape.iter().product();
            decay_mask[t.offset..t.offset + len].fill(true);
        }
        Self {
            cfg,
            m: vec![T::zero(); layout.total],
            v: vec![T::zero(); layout.total],
            decay_mask,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        let step = T::of(lr / bc1);
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.cfg.eps);
        let decay = T::of(1.0 - lr * self.cfg.weight_decay);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = tb1 * self.m[i] + ob1 * g;
            self.v[i] = tb2 * self.v[i] + ob2 * g * g;
            if self.decay_mask[i] {
                params[i] *= decay;
            }
            params[i] -= step * self.m[i] / ((self.v[i] * inv_bc2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_warmup_shape() {
        let lr = |s| learning_rate(Schedule::Cosine, 1.0, 0.1, s, 100);
        assert!((lr(0) - 0.1).abs() < 1e-12);
        assert!((lr(9) - 1.0).abs() < 1e-12);
        assert!((lr(10) - 1.0).abs() < 1e-12);
        assert!(lr(55) < lr(30));
        assert!(lr(99) < 0.01);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
