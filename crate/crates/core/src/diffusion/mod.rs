//! Epsilon-matching training, Tweedie estimates, DDPM/DDIM steps and DDIM inversion.
//!
//! Everything here acts on model-space tensors. Clean clips live in `[0,1]`
//! and enter model space through [`VideoTensor::to_signal`]; the training
//! loop does that conversion itself.

mod train;

pub(crate) use train::fit;
pub use train::{train_base, LossTrace, TrainConfig, TrainReport};

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::Conditioning;
use crate::denoiser::{DenoiserParams, GradRequest, Gradients, NoisePredictor, Objective};
use crate::error::{Result, VmcError};
use crate::schedule::{step_grid, NoiseSchedule};
use crate::video::VideoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
    /// Clamp the Tweedie estimate to the signal range `[-1, 1]` inside each step.
    #[serde(default)]
    pub clip_x0: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            eta: 0.0,
            steps: 50,
            seed: 0,
            clip_x0: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(VmcError::Config(format!("eta must lie in [0,1], got {}", self.eta)));
        }
        if self.steps == 0 || self.steps > s.steps() {
            return Err(VmcError::Config(format!(
                "steps must lie in 1..={}, got {}",
                s.steps(),
                self.steps
            )));
        }
        Ok(())
    }
}

/// Mean squared error between the predicted and the true noise over all
/// frames and coordinates, at `v_t = forward_sample(v0, t, eps)`.
pub fn epsilon_matching_loss(
    params: &DenoiserParams,
    s: &NoiseSchedule,
    v0: &VideoTensor,
    t: usize,
    eps: &VideoTensor,
    c: &Conditioning,
) -> Result<f64> {
    EpsilonMatching::new(s, v0, t, eps, c)?.value(params)
}

/// The epsilon-matching loss as a differentiable [`Objective`].
pub struct EpsilonMatching {
    v_t: VideoTensor,
    eps: VideoTensor,
    t: usize,
    c: Conditioning,
}

impl EpsilonMatching {
    pub fn new(
        s: &NoiseSchedule,
        v0: &VideoTensor,
        t: usize,
        eps: &VideoTensor,
        c: &Conditioning,
    ) -> Result<Self> {
        v0.check_same_shape(eps)?;
        let v_t = v0.with_frames(s.forward_sample(v0.frames(), t, eps.frames())?)?;
        Ok(Self {
            v_t,
            eps: eps.clone(),
            t,
            c: c.clone(),
        })
    }
}

impl Objective for EpsilonMatching {
    fn value_and_gradient(
        &self,
        params: &DenoiserParams,
        request: &GradRequest,
    ) -> Result<(f64, Gradients)> {
        let want_grad = request.selected().next().is_some();
        let (out, cache) = params.forward(&self.v_t, self.t, &self.c, want_grad)?;
        let diff = out - self.eps.frames();
        let count = diff.len() as f64;
        let value = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let grads = match cache {
            Some(cache) => params.backward(&cache, &(diff * (2.0 / count)), request),
            None => Gradients::zeros_like(params, request),
        };
        Ok((value, grads))
    }
}

/// Posterior-mean estimate of the clean video.
pub fn tweedie_video(
    v_t: &VideoTensor,
    eps_pred: &VideoTensor,
    t: usize,
    s: &NoiseSchedule,
) -> Result<VideoTensor> {
    s.check_t(t)?;
    v_t.check_same_shape(eps_pred)?;
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    v_t.with_frames(Zip::from(v_t.frames()).and(eps_pred.frames()).map_collect(|&x, &e| (x - b * e) / a))
}

/// One ancestral step `t -> t-1`; the noise term is scaled by the posterior
/// variance itself and vanishes at `t = 1`.
pub fn ddpm_step(
    v_t: &VideoTensor,
    eps_pred: &VideoTensor,
    t: usize,
    s: &NoiseSchedule,
    noise: &VideoTensor,
) -> Result<VideoTensor> {
    s.check_t(t)?;
    v_t.check_same_shape(eps_pred)?;
    v_t.check_same_shape(noise)?;
    let (alpha, ab, bt) = (s.alpha(t), s.alpha_bar(t), s.beta_tilde(t));
    let coef = (1.0 - alpha) / (1.0 - ab).sqrt();
    let inv = 1.0 / alpha.sqrt();
    v_t.with_frames(
        Zip::from(v_t.frames())
            .and(eps_pred.frames())
            .and(noise.frames())
            .map_collect(|&x, &e, &z| inv * (x - coef * e) + bt * z),
    )
}

/// Posterior variance between two grid levels; equals `beta_tilde(t)` when
/// `t_prev = t - 1`.
pub fn strided_beta_tilde(s: &NoiseSchedule, t: usize, t_prev: usize) -> f64 {
    let (ab, ab_prev) = (s.alpha_bar(t), s.alpha_bar(t_prev));
    (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)
}

/// One DDIM step `t -> t_prev` with stochasticity `eta`.
pub fn ddim_step(
    v_t: &VideoTensor,
    eps_pred: &VideoTensor,
    t: usize,
    t_prev: usize,
    s: &NoiseSchedule,
    eta: f64,
    noise: &VideoTensor,
) -> Result<VideoTensor> {
    ddim_step_clipped(v_t, eps_pred, t, t_prev, s, eta, noise, false)
}

/// [`ddim_step`] with an optional clamp of the clean estimate to `[-1, 1]`;
/// the direction term keeps the unclamped noise prediction.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step_clipped(
    v_t: &VideoTensor,
    eps_pred: &VideoTensor,
    t: usize,
    t_prev: usize,
    s: &NoiseSchedule,
    eta: f64,
    noise: &VideoTensor,
    clip_x0: bool,
) -> Result<VideoTensor> {
    if t_prev >= t {
        return Err(VmcError::Config(format!("DDIM step needs t_prev < t, got {t_prev} >= {t}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(VmcError::Config(format!("eta must lie in [0,1], got {eta}")));
    }
    v_t.check_same_shape(noise)?;
    let mut x0 = tweedie_video(v_t, eps_pred, t, s)?;
    if clip_x0 {
        x0.frames_mut().mapv_inplace(|v| v.clamp(-1.0, 1.0));
    }
    let ab_prev = s.alpha_bar(t_prev);
    let bt = strided_beta_tilde(s, t, t_prev);
    let radicand = 1.0 - ab_prev - eta * eta * bt * bt;
    if radicand < 0.0 {
        return Err(VmcError::Config(format!(
            "eta={eta} too large at t={t}: negative direction variance {radicand}"
        )));
    }
    let (a, b, c) = (ab_prev.sqrt(), radicand.sqrt(), eta * bt);
    v_t.with_frames(
        Zip::from(x0.frames())
            .and(eps_pred.frames())
            .and(noise.frames())
            .map_collect(|&x, &e, &z| a * x + b * e + c * z),
    )
}

/// Deterministic DDIM step from `t_prev` up to `t`, using the prediction
/// made at the lower level.
fn ddim_ascend(
    v_prev: &VideoTensor,
    eps_pred: &VideoTensor,
    t_prev: usize,
    t: usize,
    s: &NoiseSchedule,
) -> Result<VideoTensor> {
    let (ab_prev, ab) = (s.alpha_bar(t_prev), s.alpha_bar(t));
    let (ap, bp) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    v_prev.with_frames(
        Zip::from(v_prev.frames())
            .and(eps_pred.frames())
            .map_collect(|&x, &e| a * (x - bp * e) / ap + b * e),
    )
}

/// Latents visited by an inversion, shallowest first.
#[derive(Debug, Clone)]
pub struct Inversion {
    /// `(t, latent)` pairs starting with `(0, video)`.
    pub trajectory: Vec<(usize, VideoTensor)>,
}

impl Inversion {
    pub fn latent(&self) -> &VideoTensor {
        &self.trajectory.last().expect("inversion trajectory is never empty").1
    }

    pub fn deepest_t(&self) -> usize {
        self.trajectory.last().expect("inversion trajectory is never empty").0
    }

    pub fn into_latent(mut self) -> VideoTensor {
        self.trajectory.pop().expect("inversion trajectory is never empty").1
    }
}

/// Runs the eta = 0 DDIM recursion upwards over the `steps`-point grid.
/// The noise for each ascent from `t_prev` to `t` is predicted at level `t`
/// from the latent at `t_prev`.
pub fn ddim_invert(
    video: &VideoTensor,
    model: &dyn NoisePredictor,
    c: &Conditioning,
    steps: usize,
    s: &NoiseSchedule,
) -> Result<Inversion> {
    let grid = step_grid(s.steps(), steps)?;
    let mut trajectory = vec![(0, video.clone())];
    let mut t_prev = 0;
    let mut x = video.clone();
    for &t in &grid {
        let eps = model.predict(&x, t, c)?;
        x = ddim_ascend(&x, &eps, t_prev, t, s)?;
        trajectory.push((t, x.clone()));
        t_prev = t;
    }
    Ok(Inversion { trajectory })
}

/// DDIM sampling over the `cfg.steps`-point grid down to `t = 0`. Without an
/// initial latent the deepest state is drawn from `cfg.seed`.
pub fn sample(
    model: &dyn NoisePredictor,
    c: &Conditioning,
    cfg: &SamplerConfig,
    s: &NoiseSchedule,
    shape: (usize, usize, usize),
    init_latent: Option<&VideoTensor>,
) -> Result<VideoTensor> {
    sample_with(model, c, cfg, s, shape, init_latent, |_, x| Ok(x))
}

/// [`sample`] with a hook applied to the state after every step, called with
/// the level just reached.
pub fn sample_with<H>(
    model: &dyn NoisePredictor,
    c: &Conditioning,
    cfg: &SamplerConfig,
    s: &NoiseSchedule,
    shape: (usize, usize, usize),
    init_latent: Option<&VideoTensor>,
    mut hook: H,
) -> Result<VideoTensor>
where
    H: FnMut(usize, VideoTensor) -> Result<VideoTensor>,
{
    cfg.validate(s)?;
    let (n, h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = match init_latent {
        Some(latent) => {
            if latent.frame_count() != n || latent.height() != h || latent.width() != w {
                return Err(VmcError::shape(format!("{n}x{} ({h}x{w})", h * w), latent.shape_string()));
            }
            latent.clone()
        }
        None => VideoTensor::standard_normal(n, h, w, &mut rng),
    };
    let grid = step_grid(s.steps(), cfg.steps)?;
    for i in (0..grid.len()).rev() {
        let t = grid[i];
        let t_prev = if i == 0 { 0 } else { grid[i - 1] };
        let eps = model.predict(&x, t, c)?;
        let noise = if cfg.eta > 0.0 {
            VideoTensor::standard_normal(n, h, w, &mut rng)
        } else {
            VideoTensor::zeros(n, h, w)
        };
        x = ddim_step_clipped(&x, &eps, t, t_prev, s, cfg.eta, &noise, cfg.clip_x0)?;
        x = hook(t_prev, x)?;
    }
    Ok(x)
}

/// Elementwise squared distance, used by tests and diagnostics.
pub fn squared_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y) * (x - y))
}

#[cfg(test)]
mod tests;
