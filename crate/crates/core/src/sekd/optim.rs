//! Decoupled-weight-decay adaptive moment optimizer with a warmup-cosine
//! learning-rate schedule and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        // Base-model settings with the learning rate scaled x100 for the
        // 10k-parameter regime; a 7B-scale rate undertrains the toy.
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            warmup_frac: 0.03,
            grad_clip: 1.0,
        }
    }
}

/// AdamW over one flat parameter buffer.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: OptimizerConfig,
    total_steps: usize,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(config: OptimizerConfig, n_params: usize, total_steps: usize) -> Self {
        Self {
            config,
            total_steps: total_steps.max(1),
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// Learning rate at a 0-based step: linear warmup then cosine decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.total_steps as f64;
        let warmup = (self.config.warmup_frac * total).ceil().max(1.0);
        let s = step as f64;
        if s < warmup {
            self.config.learning_rate * (s + 1.0) / warmup
        } else {
            let progress = ((s - warmup) / (total - warmup).max(1.0)).clamp(0.0, 1.0);
            self.config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }

    pub fn grad_clip(&self) -> f64 {
        self.config.grad_clip
    }

    /// One update over the flat buffer. `grads` must already be clipped if
    /// clipping spans several buffers.
    pub fn apply<T: Scalar>(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        let lr = self.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            let g = grads[i].to_f64().unwrap_or(0.0);
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            let p = params[i].to_f64().unwrap_or(0.0);
            let update = lr * (m_hat / (v_hat.sqrt() + self.config.epsilon)
                + self.config.weight_decay * p);
            params[i] = T::from_f64c(p - update);
        }
    }
}

/// Scale `grads` in place so the global L2 norm across all buffers stays
/// at or below `clip`.
pub fn clip_global_norm<T: Scalar>(buffers: &mut [&mut [T]], clip: f64) {
    if clip <= 0.0 {
        return;
    }
    let mut sq = 0.0f64;
    for buf in buffers.iter() {
        for g in buf.iter() {
            let g = g.to_f64().unwrap_or(0.0);
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > clip {
        let scale = T::from_f64c(clip / norm);
        for buf in buffers.iter_mut() {
            for g in buf.iter_mut() {
                *g = *g * scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_warms_up_then_decays() {
        let opt = AdamW::new(OptimizerConfig::default(), 1, 1000);
        assert!(opt.lr_at(0) < opt.lr_at(29));
        assert_abs_diff_eq!(opt.lr_at(30), 2e-3, epsilon = 1e-9);
        assert!(opt.lr_at(500) < opt.lr_at(100));
        assert!(opt.lr_at(999) < 1e-4);
    }

    #[test]
    fn adamw_moves_against_the_gradient_and_decays_weights() {
        let mut opt = AdamW::new(
            OptimizerConfig {
                weight_decay: 0.1,
                ..OptimizerConfig::default()
            },
            2,
            100,
        );
        let mut params = vec![1.0f64, 1.0];
        let grads = vec![1.0f64, 0.0];
        opt.apply(&mut params, &grads);
        assert!(params[0] < 1.0);
        // Zero gradient still decays the weight.
        assert!(params[1] < 1.0);
        assert!(params[1] > params[0]);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut a = vec![3.0f64, 0.0];
        let mut b = vec![0.0f64, 4.0];
        clip_global_norm(&mut [&mut a, &mut b], 1.0);
        let norm =
            (a.iter().chain(b.iter()).map(|g| g * g).sum::<f64>()).sqrt();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
    }
}
