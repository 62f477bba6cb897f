//! Minibatch epsilon-matching training with AdamW on every tensor.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EpsilonMatching;
use crate::conditioning::{appearance_invariant, encode_prompt, Conditioning, StructuredPrompt};
use crate::denoiser::{DenoiserConfig, DenoiserParams, GradRequest, Gradients, Objective};
use crate::error::{Result, VmcError};
use crate::optim::{AdamW, AdamWConfig};
use crate::schedule::NoiseSchedule;
use crate::video::VideoTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub denoiser: DenoiserConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Linear warm-up length, after which the rate follows a cosine down to
    /// `final_lr_fraction * lr`.
    pub warmup_steps: usize,
    pub final_lr_fraction: f64,
    /// Probability that a training prompt is replaced by its
    /// appearance-invariant form.
    pub invariant_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            denoiser: DenoiserConfig::default(),
            steps: 200,
            batch_size: 4,
            optimizer: AdamWConfig::default(),
            warmup_steps: 0,
            final_lr_fraction: 1.0,
            invariant_prob: 0.2,
        }
    }
}

impl TrainConfig {
    /// Settings that fit the keyframe model in a few minutes on one core.
    pub fn toy_recipe() -> Self {
        Self {
            steps: 3000,
            batch_size: 8,
            optimizer: AdamWConfig {
                lr: 2e-3,
                clip_norm: Some(1.0),
                ..AdamWConfig::default()
            },
            warmup_steps: 100,
            final_lr_fraction: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(VmcError::Config("steps and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.invariant_prob) {
            return Err(VmcError::Config("invariant_prob must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let base = self.optimizer.lr;
        if step < self.warmup_steps {
            return base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.steps - self.warmup_steps).max(1) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        let floor = self.final_lr_fraction;
        base * (floor + (1.0 - floor) * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

/// Per-step scalar losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

impl LossTrace {
    pub fn push(&mut self, loss: f64) {
        self.losses.push(loss);
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Mean of the losses in `[start, end)`.
    pub fn window_mean(&self, start: usize, end: usize) -> f64 {
        let w = &self.losses[start.min(self.len())..end.min(self.len())];
        w.iter().sum::<f64>() / w.len().max(1) as f64
    }

    pub fn head_mean(&self, n: usize) -> f64 {
        self.window_mean(0, n)
    }

    pub fn tail_mean(&self, n: usize) -> f64 {
        self.window_mean(self.len().saturating_sub(n), self.len())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", i + 1));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub struct TrainReport {
    pub params: DenoiserParams,
    pub trace: LossTrace,
}

/// Generic fitting loop: `draw` builds the objective for each minibatch
/// element, including its timestep and noise.
pub(crate) fn fit<F>(
    mut params: DenoiserParams,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut draw: F,
) -> Result<TrainReport>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<Box<dyn Objective>>,
{
    let all: Vec<usize> = (0..params.len()).collect();
    let request = GradRequest::all(&params);
    let mut opt = AdamW::new(cfg.optimizer, &params, &all);
    let mut trace = LossTrace::default();
    for step in 0..cfg.steps {
        let mut total = Gradients::zeros_like(&params, &request);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let objective = draw(rng)?;
            let (l, g) = objective.value_and_gradient(&params, &request)?;
            loss += l;
            total.add_scaled(&g, 1.0);
        }
        let inv = 1.0 / cfg.batch_size as f64;
        total.scale(inv);
        trace.push(loss * inv);
        opt.step_with_lr(&mut params, &total, cfg.lr_at(step));
    }
    Ok(TrainReport { params, trace })
}

/// Trains the keyframe denoiser from scratch on `(clip, prompt)` pairs with
/// clips in `[0,1]`.
pub fn train_base(
    corpus: &[(VideoTensor, StructuredPrompt)],
    cfg: &TrainConfig,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    let first = corpus.first().ok_or(VmcError::EmptyCorpus)?;
    let want = (
        first.0.frame_count(),
        cfg.denoiser.frame_height,
        cfg.denoiser.frame_width,
    );
    for (v, _) in corpus {
        if (v.frame_count(), v.height(), v.width()) != want {
            return Err(VmcError::shape(
                format!("{}x{} ({}x{})", want.0, want.1 * want.2, want.1, want.2),
                v.shape_string(),
            ));
        }
    }
    let signals: Vec<VideoTensor> = corpus.iter().map(|(v, _)| v.to_signal()).collect();
    let full: Vec<Conditioning> = corpus.iter().map(|(_, p)| encode_prompt(p)).collect();
    let inv: Vec<Conditioning> = corpus
        .iter()
        .map(|(_, p)| encode_prompt(&appearance_invariant(p)))
        .collect();
    let params = DenoiserParams::init(&cfg.denoiser, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0074_7261_696e);
    fit(params, cfg, &mut rng, |rng| {
        let i = rng.random_range(0..signals.len());
        let cond = if rng.random::<f64>() < cfg.invariant_prob {
            &inv[i]
        } else {
            &full[i]
        };
        let v = &signals[i];
        let t = rng.random_range(1..=s.steps());
        let eps = VideoTensor::standard_normal(v.frame_count(), v.height(), v.width(), rng);
        Ok(Box::new(EpsilonMatching::new(s, v, t, &eps, cond)?) as Box<dyn Objective>)
    })
}
