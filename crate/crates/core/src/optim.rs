//! Adam with decoupled weight decay.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserParams, Gradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
        }
    }
}

/// Optimizer state for a fixed subset of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    indexes: Vec<usize>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &DenoiserParams, indexes: &[usize]) -> Self {
        let zeros = |i: &usize| Array2::zeros(params.tensor(*i).dim());
        Self {
            config,
            indexes: indexes.to_vec(),
            m: indexes.iter().map(zeros).collect(),
            v: indexes.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn indexes(&self) -> &[usize] {
        &self.indexes
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Optimizer over every tensor of a plain list, for models outside the
    /// denoiser.
    pub fn for_tensors(config: AdamWConfig, tensors: &[Array2<f64>]) -> Self {
        Self {
            config,
            indexes: (0..tensors.len()).collect(),
            m: tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
            v: tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
            step: 0,
        }
    }

    /// Applies one update at learning rate `lr`; tensors outside the managed
    /// subset are never touched.
    pub fn step_with_lr(&mut self, params: &mut DenoiserParams, grads: &Gradients, lr: f64) {
        let (clip, bc1, bc2) = self.advance(grads.global_norm());
        let tensors = params.tensors_mut();
        for (k, &i) in self.indexes.iter().enumerate() {
            let Some(g) = grads.get(i) else { continue };
            update(&self.config, &mut tensors[i], &mut self.m[k], &mut self.v[k], g, clip, lr, bc1, bc2);
        }
    }

    /// [`AdamW::step_with_lr`] for an optimizer built with
    /// [`AdamW::for_tensors`]; `grads[i]` belongs to `tensors[i]`.
    pub fn step_tensors(&mut self, tensors: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        let norm = grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
        let (clip, bc1, bc2) = self.advance(norm);
        for (k, &i) in self.indexes.iter().enumerate() {
            update(&self.config, &mut tensors[i], &mut self.m[k], &mut self.v[k], &grads[i], clip, lr, bc1, bc2);
        }
    }

    fn advance(&mut self, norm: f64) -> (f64, f64, f64) {
        let c = self.config;
        self.step += 1;
        let clip = match c.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        (clip, bc1, bc2)
    }

    pub fn step(&mut self, params: &mut DenoiserParams, grads: &Gradients) {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr);
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    c: &AdamWConfig,
    w: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    clip: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, g| {
        let g = g * clip;
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let step = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
        *w -= lr * (step + c.weight_decay * *w);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserConfig, GradRequest};

    #[test]
    fn first_step_moves_each_weight_by_lr_against_gradient_sign() {
        let cfg = DenoiserConfig::default();
        let mut p = DenoiserParams::init(&cfg, 0).unwrap();
        let before = p.clone();
        let mut grads = Gradients::zeros_like(&p, &GradRequest::indexes(&p, &[0]));
        grads.get_mut(0).unwrap().fill(0.3);
        let config = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(config, &p, &[0]);
        opt.step(&mut p, &grads);
        let delta = p.tensor(0) - before.tensor(0);
        for d in delta.iter() {
            assert!((d + 0.01).abs() < 1e-8);
        }
        for i in 1..p.len() {
            assert_eq!(p.tensor(i), before.tensor(i));
        }
    }

    #[test]
    fn decay_shrinks_weights_without_gradient() {
        let cfg = DenoiserConfig::default();
        let mut p = DenoiserParams::init(&cfg, 0).unwrap();
        let w0 = p.tensor(0).clone();
        let grads = Gradients::zeros_like(&p, &GradRequest::indexes(&p, &[0]));
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                weight_decay: 0.5,
                ..Default::default()
            },
            &p,
            &[0],
        );
        opt.step(&mut p, &grads);
        let expect = w0.mapv(|w| w * (1.0 - 0.05));
        assert!((p.tensor(0) - &expect).iter().all(|d| d.abs() < 1e-12));
    }
}
