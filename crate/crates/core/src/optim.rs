//! AdamW with decoupled weight decay, plus the warmup+cosine learning-rate
//! schedule used by the training harness.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AdamWConfig {
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, weight_decay: 0.05, beta1: 0.9, beta2: 0.95, eps: 1e-8 }
    }
}

/// Moment state is kept by parameter position, so the caller must pass the
/// same parameter list (same order, same shapes) to every step.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Serializable snapshot: (step, moment buffers in parameter order).
    pub fn state(&self) -> (u64, &[Vec<f32>], &[Vec<f32>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(cfg: AdamWConfig, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) -> Self {
        AdamW { cfg, step, m, v }
    }

    /// One update over all parameters with the given learning rate (the
    /// schedule owns lr, not the optimizer). Gradients are consumed.
    pub fn step(&mut self, params: &mut [(String, Tensor)], lr: f32) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        }
        if self.m.len() != params.len() {
            return Err(CoreError::InvalidArg {
                what: "adamw_step",
                detail: alloc::format!("optimizer tracks {} params, got {}", self.m.len(), params.len()),
            });
        }
        for (name, p) in params.iter() {
            if p.requires_grad() && p.grad().is_none() {
                return Err(CoreError::MissingGrad { param: name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - powi(self.cfg.beta1, t);
        let bc2 = 1.0 - powi(self.cfg.beta2, t);
        let (b1, b2, wd, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.weight_decay, self.cfg.eps);

        for (idx, (name, p)) in params.iter_mut().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            let grad = p.grad().expect("checked above").to_vec();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            // Only linear weight matrices (`*.w`) are decayed; biases, norm
            // parameters, and learned tokens/embeddings are exempt, the
            // usual ViT convention. Decaying group tokens in particular
            // shrinks them toward one another and invites segment collapse.
            let decay = if name.ends_with(".w") { 1.0 - lr * wd } else { 1.0 };
            for ((pv, (mi, vi)), &g) in
                p.data_mut().iter_mut().zip(m.iter_mut().zip(v.iter_mut())).zip(&grad)
            {
                *pv *= decay;
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pv -= lr * mhat / (libm::sqrtf(vhat) + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

fn powi(base: f32, n: i32) -> f32 {
    let mut acc = 1.0f32;
    for _ in 0..n {
        acc *= base;
    }
    acc
}

/// Linear warmup to `base_lr`, then cosine decay to `min_lr`.
pub fn lr_at(step: u64, total_steps: u64, warmup_steps: u64, base_lr: f32, min_lr: f32) -> f32 {
    if warmup_steps > 0 && step < warmup_steps {
        return base_lr * (step + 1) as f32 / warmup_steps as f32;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    let progress = progress.min(1.0);
    let cos = libm::cos(core::f64::consts::PI * progress);
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + cos as f32)
}
