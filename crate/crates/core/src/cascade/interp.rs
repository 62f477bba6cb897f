//! Keyframe-conditioned frame interpolation over 5-frame windows.
//!
//! A window holds two clean keyframes in slots 0 and 4. The three middle
//! slots carry the residual of each target frame against the linear blend of
//! the keyframes, and only those slots are diffused.

use ndarray::{s, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{Conditioning, MotionClass};
use crate::corpus::{ClipSpec, KEYFRAMES};
use crate::denoiser::{DenoiserParams, GradRequest, Gradients, Objective};
use crate::diffusion::{fit, sample_with, SamplerConfig, TrainConfig, TrainReport};
use crate::error::{Result, VmcError};
use crate::optim::AdamWConfig;
use crate::schedule::NoiseSchedule;
use crate::video::VideoTensor;

pub const WINDOW: usize = 5;
/// Frames generated between consecutive keyframes.
pub const INSERTED: usize = WINDOW - 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpTrainConfig {
    pub train: TrainConfig,
    /// Number of source clips the window pool is cut from.
    pub clips: usize,
    /// Probability of a window whose five frames are identical.
    pub static_prob: f64,
}

impl Default for InterpTrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                steps: 1500,
                batch_size: 8,
                optimizer: AdamWConfig {
                    lr: 2e-3,
                    clip_norm: Some(1.0),
                    ..AdamWConfig::default()
                },
                warmup_steps: 100,
                final_lr_fraction: 0.05,
                invariant_prob: 0.0,
                ..TrainConfig::default()
            },
            clips: 256,
            static_prob: 0.15,
        }
    }
}

/// The frozen interpolation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolator {
    pub params: DenoiserParams,
    pub schedule: NoiseSchedule,
    pub sampler_steps: usize,
}

/// Blend weight of the right keyframe for middle slot `j` in `1..=3`.
fn blend(j: usize) -> f64 {
    j as f64 / (WINDOW - 1) as f64
}

/// Model-space window from five `[0,1]` frames.
pub fn encode_window(frames: &VideoTensor) -> Result<VideoTensor> {
    if frames.frame_count() != WINDOW {
        return Err(VmcError::shape(format!("{WINDOW} frames"), frames.shape_string()));
    }
    let sig = frames.to_signal();
    let mut out = sig.frames().clone();
    let (k0, k4) = (sig.frame(0), sig.frame(WINDOW - 1));
    for j in 1..WINDOW - 1 {
        let w = blend(j);
        Zip::from(out.row_mut(j))
            .and(k0)
            .and(k4)
            .for_each(|o, &a, &b| *o -= (1.0 - w) * a + w * b);
    }
    sig.with_frames(out)
}

/// Inverse of [`encode_window`], returning `[0,1]` frames.
pub fn decode_window(window: &VideoTensor) -> Result<VideoTensor> {
    let mut out = window.frames().clone();
    let (k0, k4) = (window.frame(0), window.frame(WINDOW - 1));
    for j in 1..WINDOW - 1 {
        let w = blend(j);
        Zip::from(out.row_mut(j))
            .and(k0)
            .and(k4)
            .for_each(|o, &a, &b| *o += (1.0 - w) * a + w * b);
    }
    Ok(window.with_frames(out)?.from_signal())
}

/// Epsilon matching restricted to the middle slots, with clean keyframes.
pub struct WindowMatching {
    v_t: VideoTensor,
    eps: Array2<f64>,
    t: usize,
}

impl WindowMatching {
    pub fn new(s: &NoiseSchedule, window: &VideoTensor, t: usize, eps: &VideoTensor) -> Result<Self> {
        window.check_same_shape(eps)?;
        let noisy = s.forward_sample(window.frames(), t, eps.frames())?;
        let mut frames = window.frames().clone();
        frames
            .slice_mut(s![1..WINDOW - 1, ..])
            .assign(&noisy.slice(s![1..WINDOW - 1, ..]));
        Ok(Self {
            v_t: window.with_frames(frames)?,
            eps: eps.frames().slice(s![1..WINDOW - 1, ..]).to_owned(),
            t,
        })
    }
}

impl Objective for WindowMatching {
    fn value_and_gradient(
        &self,
        params: &DenoiserParams,
        request: &GradRequest,
    ) -> Result<(f64, Gradients)> {
        let want_grad = request.selected().next().is_some();
        let (out, cache) = params.forward(&self.v_t, self.t, &Conditioning::null(), want_grad)?;
        let diff = &out.slice(s![1..WINDOW - 1, ..]) - &self.eps;
        let count = diff.len() as f64;
        let value = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let grads = match cache {
            Some(cache) => {
                let mut upstream = Array2::zeros(out.dim());
                upstream
                    .slice_mut(s![1..WINDOW - 1, ..])
                    .assign(&(diff * (2.0 / count)));
                params.backward(&cache, &upstream, request)
            }
            None => Gradients::zeros_like(params, request),
        };
        Ok((value, grads))
    }
}

/// Encoded training windows: consecutive keyframe pairs of random clips with
/// the three quarter-step frames between them.
pub fn window_pool(clips: usize, static_prob: f64, seed: u64) -> Result<Vec<VideoTensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(clips * (KEYFRAMES - 1));
    for i in 0..clips {
        let class = MotionClass::ALL[i % MotionClass::ALL.len()];
        let spec = ClipSpec::sample(class, KEYFRAMES, &mut rng);
        for k in 0..KEYFRAMES - 1 {
            let times: Vec<f64> = if rng.random::<f64>() < static_prob {
                vec![k as f64; WINDOW]
            } else {
                (0..WINDOW).map(|j| k as f64 + blend(j)).collect()
            };
            let (low, _) = spec.render_at(&times)?;
            out.push(encode_window(&low)?);
        }
    }
    Ok(out)
}

/// Trains the interpolation denoiser on a fresh window pool.
pub fn train_interpolator(
    cfg: &InterpTrainConfig,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<TrainReport> {
    cfg.train.validate()?;
    if cfg.clips == 0 {
        return Err(VmcError::EmptyCorpus);
    }
    let pool = window_pool(cfg.clips, cfg.static_prob, seed)?;
    let params = DenoiserParams::init(&cfg.train.denoiser, seed ^ 0x696e_7465_7270)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7769_6e64);
    let mut report = fit(params, &cfg.train, &mut rng, |rng| {
        let w = &pool[rng.random_range(0..pool.len())];
        let t = rng.random_range(1..=s.steps());
        let eps = VideoTensor::standard_normal(WINDOW, w.height(), w.width(), rng);
        Ok(Box::new(WindowMatching::new(s, w, t, &eps)?) as Box<dyn Objective>)
    })?;
    report.params.round_to_f32();
    Ok(report)
}

impl Interpolator {
    /// Three frames between two `[0,1]` keyframes, sampled with the keyframe
    /// slots clamped after every step. Returns all five frames.
    pub fn fill_gap(&self, left: &VideoTensor, right: &VideoTensor, seed: u64) -> Result<VideoTensor> {
        left.check_same_shape(right)?;
        let (h, w) = (left.height(), left.width());
        let mut frames = Array2::zeros((WINDOW, h * w));
        frames.row_mut(0).assign(&left.frame(0));
        frames.row_mut(WINDOW - 1).assign(&right.frame(0));
        let clean = encode_window(&VideoTensor::new(frames, h, w)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = VideoTensor::standard_normal(WINDOW, h, w, &mut rng);
        let mut init = clean.frames().clone();
        init.slice_mut(s![1..WINDOW - 1, ..])
            .assign(&noise.frames().slice(s![1..WINDOW - 1, ..]));
        let init = clean.with_frames(init)?;
        let cfg = SamplerConfig {
            steps: self.sampler_steps,
            seed,
            ..SamplerConfig::default()
        };
        let clamp = |_t: usize, mut x: VideoTensor| {
            x.frames_mut().row_mut(0).assign(&clean.frame(0));
            x.frames_mut().row_mut(WINDOW - 1).assign(&clean.frame(WINDOW - 1));
            Ok(x)
        };
        let out = sample_with(
            &self.params,
            &Conditioning::null(),
            &cfg,
            &self.schedule,
            (WINDOW, h, w),
            Some(&init),
            clamp,
        )?;
        Ok(decode_window(&out)?.clamp_unit())
    }

    /// Expands 8 keyframes to 29 frames; keyframe `k` lands at index `4k`.
    pub fn interpolate(&self, keyframes: &VideoTensor, seed: u64) -> Result<VideoTensor> {
        interpolate_frames(keyframes, self, seed)
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }
}

/// Output length for `n` keyframes.
pub fn interpolated_len(n: usize) -> usize {
    n + (n - 1) * INSERTED
}

/// Output indexes (0-based) at which the keyframes land.
pub fn keyframe_slots(n: usize) -> Vec<usize> {
    (0..n).map(|k| k * (INSERTED + 1)).collect()
}

/// Expands exactly 8 keyframes to 29 frames, inserting three generated frames
/// into each gap. Keyframes are copied through unchanged.
pub fn interpolate_frames(keyframes: &VideoTensor, model: &Interpolator, seed: u64) -> Result<VideoTensor> {
    let n = keyframes.frame_count();
    if n != KEYFRAMES {
        return Err(VmcError::shape(format!("{KEYFRAMES} keyframes"), format!("{n} frames")));
    }
    let cfg = model.params.config();
    if keyframes.height() != cfg.frame_height || keyframes.width() != cfg.frame_width {
        return Err(VmcError::shape(
            format!("{}x{} frames", cfg.frame_height, cfg.frame_width),
            keyframes.shape_string(),
        ));
    }
    let total = interpolated_len(n);
    let mut out = Array2::zeros((total, keyframes.frame_dim()));
    for k in 0..n - 1 {
        let left = keyframes.slice_frames(k, k + 1);
        let right = keyframes.slice_frames(k + 1, k + 2);
        let window = model.fill_gap(&left, &right, seed.wrapping_add(k as u64))?;
        let base = k * (INSERTED + 1);
        for j in 1..WINDOW - 1 {
            out.row_mut(base + j).assign(&window.frame(j));
        }
    }
    for (k, slot) in keyframe_slots(n).into_iter().enumerate() {
        out.row_mut(slot).assign(&keyframes.frame(k));
    }
    VideoTensor::new(out, keyframes.height(), keyframes.width())
}
