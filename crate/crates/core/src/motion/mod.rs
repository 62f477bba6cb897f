//! Motion vectors, residual alignment losses and temporal-attention adaptation.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{encode_prompt, Conditioning, StructuredPrompt};
use crate::denoiser::{DenoiserParams, GradRequest, Gradients, Objective, ParamGroup};
use crate::diffusion::LossTrace;
use crate::error::{Result, VmcError};
use crate::optim::{AdamW, AdamWConfig};
use crate::schedule::NoiseSchedule;
use crate::video::VideoTensor;

/// Denominator guard of the cosine loss.
pub const COS_GUARD: f64 = 1e-8;

/// Frame residuals `x[n + stride] - x[n]`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionVectors {
    deltas: Array2<f64>,
    stride: usize,
    timestep: usize,
}

impl MotionVectors {
    pub fn from_deltas(deltas: Array2<f64>, stride: usize, timestep: usize) -> Self {
        Self {
            deltas,
            stride,
            timestep,
        }
    }

    pub fn deltas(&self) -> &Array2<f64> {
        &self.deltas
    }

    pub fn into_deltas(self) -> Array2<f64> {
        self.deltas
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    /// Relabels the noise level the residuals were formed at.
    pub fn at_timestep(mut self, t: usize) -> Self {
        self.timestep = t;
        self
    }

    pub fn rows(&self) -> usize {
        self.deltas.nrows()
    }

    fn check_compatible(&self, other: &MotionVectors) -> Result<()> {
        if self.deltas.dim() != other.deltas.dim() || self.stride != other.stride {
            return Err(VmcError::shape(
                format!("{:?} at stride {}", self.deltas.dim(), self.stride),
                format!("{:?} at stride {}", other.deltas.dim(), other.stride),
            ));
        }
        Ok(())
    }
}

fn difference(x: &Array2<f64>, stride: usize) -> Result<Array2<f64>> {
    let n = x.nrows();
    if stride == 0 || stride >= n {
        return Err(VmcError::InvalidRange(format!(
            "stride must lie in 1..={}, got {stride}",
            n.saturating_sub(1)
        )));
    }
    Ok(&x.slice(s![stride.., ..]) - &x.slice(s![..n - stride, ..]))
}

/// Adjoint of [`difference`]: spreads residual gradients back onto frames.
fn difference_adjoint(g: &Array2<f64>, stride: usize, frames: usize) -> Array2<f64> {
    let mut out = Array2::zeros((frames, g.ncols()));
    let rows = g.nrows();
    {
        let mut hi = out.slice_mut(s![stride..stride + rows, ..]);
        hi += g;
    }
    let mut lo = out.slice_mut(s![..rows, ..]);
    lo -= g;
    out
}

/// Residuals of a clean or noisy video; the timestep label is 0.
pub fn motion_vectors(x: &VideoTensor, stride: usize) -> Result<MotionVectors> {
    Ok(MotionVectors::from_deltas(difference(x.frames(), stride)?, stride, 0))
}

/// Residuals of a noise prediction.
pub fn predicted_epsilon_residuals(eps_pred: &VideoTensor, stride: usize) -> Result<MotionVectors> {
    motion_vectors(eps_pred, stride)
}

/// `(dv_t - sqrt(1 - alpha_bar_t) d_eps) / sqrt(alpha_bar_t)`, rowwise.
pub fn denoised_motion_estimate(
    dv_t: &MotionVectors,
    d_eps_pred: &MotionVectors,
    t: usize,
    s: &NoiseSchedule,
) -> Result<MotionVectors> {
    s.check_t(t)?;
    dv_t.check_compatible(d_eps_pred)?;
    let ab = s.alpha_bar(t);
    let deltas = (&dv_t.deltas - &(&d_eps_pred.deltas * (1.0 - ab).sqrt())) / ab.sqrt();
    Ok(MotionVectors::from_deltas(deltas, dv_t.stride, 0))
}

/// `(1 - alpha_bar_t) / alpha_bar_t` times the row-averaged squared distance
/// between residuals.
pub fn loss_l2_align(
    d_eps_true: &MotionVectors,
    d_eps_pred: &MotionVectors,
    t: usize,
    s: &NoiseSchedule,
) -> Result<f64> {
    s.check_t(t)?;
    d_eps_true.check_compatible(d_eps_pred)?;
    let ab = s.alpha_bar(t);
    let diff = &d_eps_true.deltas - &d_eps_pred.deltas;
    Ok((1.0 - ab) / ab * diff.mapv(|d| d * d).sum() / diff.nrows() as f64)
}

/// Value of the cosine loss together with the number of rows whose norm
/// product fell under the denominator guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosLoss {
    pub value: f64,
    pub degenerate_rows: usize,
}

/// Mean over rows of `1 - <x, y> / (|x| |y| + guard)`.
pub fn loss_cos(d_eps_true: &MotionVectors, d_eps_pred: &MotionVectors) -> Result<f64> {
    Ok(loss_cos_diagnostic(d_eps_true, d_eps_pred)?.value)
}

pub fn loss_cos_diagnostic(
    d_eps_true: &MotionVectors,
    d_eps_pred: &MotionVectors,
) -> Result<CosLoss> {
    d_eps_true.check_compatible(d_eps_pred)?;
    let (value, _, degenerate_rows) = cos_value_and_grad(&d_eps_true.deltas, &d_eps_pred.deltas, false);
    Ok(CosLoss {
        value,
        degenerate_rows,
    })
}

fn cos_value_and_grad(x: &Array2<f64>, y: &Array2<f64>, want_grad: bool) -> (f64, Array2<f64>, usize) {
    let rows = x.nrows();
    let mut grad = Array2::zeros(if want_grad { y.dim() } else { (0, 0) });
    let mut total = 0.0;
    let mut degenerate = 0;
    for n in 0..rows {
        let (xr, yr) = (x.row(n), y.row(n));
        let nx = xr.dot(&xr).sqrt();
        let ny = yr.dot(&yr).sqrt();
        let dot = xr.dot(&yr);
        let denom = nx * ny + COS_GUARD;
        if nx * ny < COS_GUARD {
            degenerate += 1;
        }
        total += 1.0 - dot / denom;
        if want_grad {
            let mut g = grad.row_mut(n);
            g.scaled_add(-1.0 / (denom * rows as f64), &xr);
            if ny > 0.0 {
                g.scaled_add(dot * nx / (ny * denom * denom * rows as f64), &yr);
            }
        }
    }
    (total / rows as f64, grad, degenerate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillLoss {
    Cos,
    L2,
}

impl DistillLoss {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cos" | "cosine" => Ok(Self::Cos),
            "l2" => Ok(Self::L2),
            other => Err(VmcError::Config(format!("unknown loss `{other}` (cos, l2)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cos => "cos",
            Self::L2 => "l2",
        }
    }
}

/// Which tensors adaptation may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptTarget {
    TemporalAttention,
    /// Spatial attention Q/K/V plus the conditioning projections.
    SpatialAndConditioning,
}

impl AdaptTarget {
    pub fn name(self) -> &'static str {
        match self {
            Self::TemporalAttention => "temporal",
            Self::SpatialAndConditioning => "spatial",
        }
    }

    pub fn groups(self) -> &'static [ParamGroup] {
        match self {
            Self::TemporalAttention => &[ParamGroup::TemporalAttention],
            Self::SpatialAndConditioning => &[ParamGroup::SpatialAttention, ParamGroup::Conditioning],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "temporal" | "temporal_attention" => Ok(Self::TemporalAttention),
            "spatial" | "spatial_and_conditioning" => Ok(Self::SpatialAndConditioning),
            other => Err(VmcError::Config(format!(
                "unknown adaptation target `{other}` (temporal, spatial)"
            ))),
        }
    }
}

/// The residual distillation loss at one `(t, eps)` draw, differentiable in
/// the network parameters.
pub struct Distillation<'a> {
    s: &'a NoiseSchedule,
    v_t: VideoTensor,
    d_eps: MotionVectors,
    t: usize,
    c: Conditioning,
    loss: DistillLoss,
}

impl<'a> Distillation<'a> {
    /// `v0` is in model space.
    pub fn new(
        s: &'a NoiseSchedule,
        v0: &VideoTensor,
        t: usize,
        eps: &VideoTensor,
        c: &Conditioning,
        loss: DistillLoss,
        stride: usize,
    ) -> Result<Self> {
        v0.check_same_shape(eps)?;
        let v_t = v0.with_frames(s.forward_sample(v0.frames(), t, eps.frames())?)?;
        let d_eps = motion_vectors(eps, stride)?.at_timestep(t);
        Ok(Self {
            s,
            v_t,
            d_eps,
            t,
            c: c.clone(),
            loss,
        })
    }

    fn evaluate(&self, params: &DenoiserParams, request: Option<&GradRequest>) -> Result<(f64, Option<Gradients>, usize)> {
        let (out, cache) = params.forward(&self.v_t, self.t, &self.c, request.is_some())?;
        let stride = self.d_eps.stride();
        let pred = difference(&out, stride)?;
        let truth = self.d_eps.deltas();
        let (value, d_pred, degenerate) = match self.loss {
            DistillLoss::Cos => cos_value_and_grad(truth, &pred, request.is_some()),
            DistillLoss::L2 => {
                let ab = self.s.alpha_bar(self.t);
                let w = (1.0 - ab) / ab / pred.nrows() as f64;
                let diff = &pred - truth;
                (w * diff.mapv(|d| d * d).sum(), diff * (2.0 * w), 0)
            }
        };
        let grads = match (cache, request) {
            (Some(cache), Some(req)) => {
                let d_out = difference_adjoint(&d_pred, stride, out.nrows());
                Some(params.backward(&cache, &d_out, req))
            }
            _ => None,
        };
        Ok((value, grads, degenerate))
    }
}

impl Objective for Distillation<'_> {
    fn value_and_gradient(
        &self,
        params: &DenoiserParams,
        request: &GradRequest,
    ) -> Result<(f64, Gradients)> {
        let (value, grads, _) = self.evaluate(params, Some(request))?;
        Ok((value, grads.expect("gradient requested")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub steps: usize,
    pub optimizer: AdamWConfig,
    pub loss: DistillLoss,
    pub target: AdaptTarget,
    pub stride: usize,
    /// Accept prompts that still carry appearance or background attributes.
    pub allow_non_invariant: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            optimizer: AdamWConfig::default(),
            loss: DistillLoss::Cos,
            target: AdaptTarget::TemporalAttention,
            stride: 1,
            allow_non_invariant: false,
        }
    }
}

/// Record attached to adapted checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptProvenance {
    pub source_clip_hash: String,
    pub prompt: StructuredPrompt,
    pub loss: DistillLoss,
    pub target: AdaptTarget,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub base_params_hash: String,
}

pub struct AdaptReport {
    pub params: DenoiserParams,
    pub trace: LossTrace,
    /// Residual rows that hit the cosine guard, summed over iterations.
    pub degenerate_rows: usize,
    pub provenance: AdaptProvenance,
}

/// One-shot motion distillation on `video` (pixels in `[0,1]`): every
/// iteration draws `t` uniformly from `1..=T` and fresh per-frame noise, and
/// updates only the tensors selected by `cfg.target`.
pub fn adapt_temporal_attention(
    params: &DenoiserParams,
    video: &VideoTensor,
    prompt_inv: &StructuredPrompt,
    cfg: &AdaptConfig,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<AdaptReport> {
    if video.frame_count() < 2 {
        return Err(VmcError::InvalidRange(format!(
            "adaptation needs N >= 2 frames, got {}",
            video.frame_count()
        )));
    }
    if !cfg.allow_non_invariant && !prompt_inv.is_appearance_invariant() {
        return Err(VmcError::NotInvariant(prompt_inv.to_json()));
    }
    let c = encode_prompt(prompt_inv);
    let v0 = video.to_signal();
    let selected = params.indexes_in(cfg.target.groups());
    let request = GradRequest::indexes(params, &selected);
    let frozen: Vec<(usize, String)> = (0..params.len())
        .filter(|i| !selected.contains(i))
        .map(|i| (i, params.tensor_hash(i)))
        .collect();

    let mut adapted = params.clone();
    let mut opt = AdamW::new(cfg.optimizer, &adapted, &selected);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = LossTrace::default();
    let mut degenerate_rows = 0;
    for _ in 0..cfg.steps {
        let t = rng.random_range(1..=s.steps());
        let eps = VideoTensor::standard_normal(v0.frame_count(), v0.height(), v0.width(), &mut rng);
        let objective = Distillation::new(s, &v0, t, &eps, &c, cfg.loss, cfg.stride)?;
        let (value, grads, degenerate) = objective.evaluate(&adapted, Some(&request))?;
        degenerate_rows += degenerate;
        trace.push(value);
        opt.step(&mut adapted, &grads.expect("gradient requested"));
    }
    for (i, hash) in &frozen {
        let now = adapted.tensor_hash(*i);
        if &now != hash {
            return Err(VmcError::HashMismatch {
                what: adapted.specs()[*i].name.clone(),
                expected: hash.clone(),
                found: now,
            });
        }
    }
    let provenance = AdaptProvenance {
        source_clip_hash: video.content_hash(),
        prompt: prompt_inv.clone(),
        loss: cfg.loss,
        target: cfg.target,
        steps: cfg.steps,
        seed,
        lr: cfg.optimizer.lr,
        base_params_hash: params.content_hash(),
    };
    Ok(AdaptReport {
        params: adapted,
        trace,
        degenerate_rows,
        provenance,
    })
}

/// Mean row norm of a residual set, a quick magnitude diagnostic.
pub fn mean_row_norm(m: &MotionVectors) -> f64 {
    let norms: Array1<f64> = m.deltas.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    norms.mean().unwrap_or(0.0)
}
