//! Toy noise-prediction network with an explicit spatial/temporal attention split.
//!
//! Each frame is cut into `patch x patch` tokens. A block applies conditioning
//! and time biases, spatial self-attention among the tokens of one frame,
//! temporal attention across frames at one token position, then a per-token
//! MLP. Only the temporal attention query/key/value projections form the
//! `TemporalAttention` partition that motion distillation updates.

mod checkpoint;
mod network;

use std::fmt;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use network::{ForwardCache, Gradients};

use crate::conditioning::{Conditioning, EMBED_DIM};
use crate::error::{Result, VmcError};
use crate::video::VideoTensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub patch: usize,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub cond_dim: usize,
    pub time_embed_dim: usize,
    pub mlp_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            frame_height: 16,
            frame_width: 16,
            patch: 4,
            hidden_dim: 64,
            n_blocks: 2,
            cond_dim: EMBED_DIM,
            time_embed_dim: 32,
            mlp_dim: 128,
        }
    }
}

impl DenoiserConfig {
    pub fn frame_dim(&self) -> usize {
        self.frame_height * self.frame_width
    }

    pub fn tokens(&self) -> usize {
        (self.frame_height / self.patch) * (self.frame_width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.frame_height,
            self.frame_width,
            self.patch,
            self.hidden_dim,
            self.n_blocks,
            self.cond_dim,
            self.time_embed_dim,
            self.mlp_dim,
        ];
        if dims.contains(&0) {
            return Err(VmcError::Config("every denoiser dimension must be >= 1".into()));
        }
        if !self.frame_height.is_multiple_of(self.patch) || !self.frame_width.is_multiple_of(self.patch) {
            return Err(VmcError::Config(format!(
                "patch {} does not tile {}x{} frames",
                self.patch, self.frame_height, self.frame_width
            )));
        }
        if !self.time_embed_dim.is_multiple_of(2) || !self.hidden_dim.is_multiple_of(2) {
            return Err(VmcError::Config(
                "time and hidden widths must be even for sinusoidal embeddings".into(),
            ));
        }
        Ok(())
    }
}

/// Finer-grained role of each tensor. The two-way partition used by the
/// freeze contract is [`ParamGroup::label`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    TemporalAttention,
    SpatialAttention,
    Conditioning,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PartitionLabel {
    TemporalAttention,
    Other,
}

impl ParamGroup {
    pub fn label(self) -> PartitionLabel {
        match self {
            ParamGroup::TemporalAttention => PartitionLabel::TemporalAttention,
            _ => PartitionLabel::Other,
        }
    }
}

impl fmt::Display for PartitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionLabel::TemporalAttention => "TEMPORAL_ATTENTION",
            PartitionLabel::Other => "OTHER",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub group: ParamGroup,
    pub shape: (usize, usize),
}

// Global tensor slots.
pub(crate) const PATCH_W: usize = 0;
pub(crate) const PATCH_B: usize = 1;
pub(crate) const POS_EMB: usize = 2;
pub(crate) const OUT_W: usize = 3;
pub(crate) const OUT_B: usize = 4;
pub(crate) const GLOBAL_TENSORS: usize = 5;

// Per-block slots, offset from the block base.
pub(crate) const TIME_PROJ: usize = 0;
pub(crate) const COND_PROJ: usize = 1;
pub(crate) const S_Q: usize = 2;
#[allow(dead_code)]
pub(crate) const S_K: usize = 3;
#[allow(dead_code)]
pub(crate) const S_V: usize = 4;
pub(crate) const S_O: usize = 5;
pub(crate) const T_Q: usize = 6;
#[allow(dead_code)]
pub(crate) const T_K: usize = 7;
#[allow(dead_code)]
pub(crate) const T_V: usize = 8;
pub(crate) const T_O: usize = 9;
pub(crate) const MLP_W1: usize = 10;
pub(crate) const MLP_B1: usize = 11;
pub(crate) const MLP_W2: usize = 12;
pub(crate) const MLP_B2: usize = 13;
pub(crate) const BLOCK_TENSORS: usize = 14;

pub(crate) fn block_slot(block: usize, slot: usize) -> usize {
    GLOBAL_TENSORS + block * BLOCK_TENSORS + slot
}

pub fn tensor_specs(cfg: &DenoiserConfig) -> Vec<TensorSpec> {
    let h = cfg.hidden_dim;
    let spec = |name: String, group, shape| TensorSpec { name, group, shape };
    let mut out = vec![
        spec("patch_embed.weight".into(), ParamGroup::Other, (cfg.patch_dim(), h)),
        spec("patch_embed.bias".into(), ParamGroup::Other, (1, h)),
        spec("pos_embed".into(), ParamGroup::Other, (cfg.tokens(), h)),
        spec("head.weight".into(), ParamGroup::Other, (h, cfg.patch_dim())),
        spec("head.bias".into(), ParamGroup::Other, (1, cfg.patch_dim())),
    ];
    for b in 0..cfg.n_blocks {
        let p = |s: &str| format!("blocks.{b}.{s}");
        out.extend([
            spec(p("time_proj"), ParamGroup::Other, (cfg.time_embed_dim, h)),
            spec(p("cond_proj"), ParamGroup::Conditioning, (cfg.cond_dim, h)),
            spec(p("spatial_attn.q"), ParamGroup::SpatialAttention, (h, h)),
            spec(p("spatial_attn.k"), ParamGroup::SpatialAttention, (h, h)),
            spec(p("spatial_attn.v"), ParamGroup::SpatialAttention, (h, h)),
            spec(p("spatial_attn.out"), ParamGroup::Other, (h, h)),
            spec(p("temporal_attn.q"), ParamGroup::TemporalAttention, (h, h)),
            spec(p("temporal_attn.k"), ParamGroup::TemporalAttention, (h, h)),
            spec(p("temporal_attn.v"), ParamGroup::TemporalAttention, (h, h)),
            spec(p("temporal_attn.out"), ParamGroup::Other, (h, h)),
            spec(p("mlp.fc1.weight"), ParamGroup::Other, (h, cfg.mlp_dim)),
            spec(p("mlp.fc1.bias"), ParamGroup::Other, (1, cfg.mlp_dim)),
            spec(p("mlp.fc2.weight"), ParamGroup::Other, (cfg.mlp_dim, h)),
            spec(p("mlp.fc2.bias"), ParamGroup::Other, (1, h)),
        ]);
    }
    out
}

/// Network weights plus the partition map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    specs: Vec<TensorSpec>,
    tensors: Vec<Array2<f64>>,
}

impl DenoiserParams {
    /// Deterministic initialization from `seed`.
    pub fn init(cfg: &DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let specs = tensor_specs(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| {
                let (rows, cols) = s.shape;
                let std = if s.name.ends_with("bias") {
                    0.0
                } else if s.name == "pos_embed" {
                    0.5
                } else if s.name.ends_with(".out") || s.name.ends_with("fc2.weight") {
                    0.5 / (rows as f64).sqrt()
                } else {
                    1.0 / (rows as f64).sqrt()
                };
                if std == 0.0 {
                    Array2::zeros((rows, cols))
                } else {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
                }
            })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            specs,
            tensors,
        })
    }

    pub fn from_tensors(cfg: &DenoiserConfig, tensors: Vec<Array2<f64>>) -> Result<Self> {
        cfg.validate()?;
        let specs = tensor_specs(cfg);
        if specs.len() != tensors.len() {
            return Err(VmcError::Checkpoint(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if t.dim() != s.shape {
                return Err(VmcError::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    t.dim(),
                    s.shape
                )));
            }
        }
        Ok(Self {
            config: cfg.clone(),
            specs,
            tensors,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn tensor(&self, i: usize) -> &Array2<f64> {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn indexes_in(&self, groups: &[ParamGroup]) -> Vec<usize> {
        self.specs
            .iter()
            .enumerate()
            .filter(|(_, s)| groups.contains(&s.group))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// SHA-256 over the exact `f64` bytes of one tensor.
    pub fn tensor_hash(&self, i: usize) -> String {
        let mut h = Sha256::new();
        for v in self.tensors[i].iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// SHA-256 over every tensor in order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            for v in t.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Rounds every weight through `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// Predicted noise for every frame of `v_t`.
    pub fn predict_noise(
        &self,
        v_t: &VideoTensor,
        t: usize,
        c: &Conditioning,
    ) -> Result<VideoTensor> {
        let (out, _) = self.forward(v_t, t, c, false)?;
        v_t.with_frames(out)
    }
}

/// Anything that can play the role of the noise predictor in a sampler.
pub trait NoisePredictor {
    fn predict(&self, v_t: &VideoTensor, t: usize, c: &Conditioning) -> Result<VideoTensor>;
}

impl NoisePredictor for DenoiserParams {
    fn predict(&self, v_t: &VideoTensor, t: usize, c: &Conditioning) -> Result<VideoTensor> {
        self.predict_noise(v_t, t, c)
    }
}

impl<F> NoisePredictor for F
where
    F: Fn(&VideoTensor, usize, &Conditioning) -> Result<VideoTensor>,
{
    fn predict(&self, v_t: &VideoTensor, t: usize, c: &Conditioning) -> Result<VideoTensor> {
        self(v_t, t, c)
    }
}

/// Which tensors a backward pass must produce gradients for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradRequest {
    wanted: Vec<bool>,
}

impl GradRequest {
    pub fn all(params: &DenoiserParams) -> Self {
        Self {
            wanted: vec![true; params.len()],
        }
    }

    pub fn groups(params: &DenoiserParams, groups: &[ParamGroup]) -> Self {
        Self {
            wanted: params.specs().iter().map(|s| groups.contains(&s.group)).collect(),
        }
    }

    pub fn indexes(params: &DenoiserParams, idx: &[usize]) -> Self {
        let mut wanted = vec![false; params.len()];
        for i in idx {
            wanted[*i] = true;
        }
        Self { wanted }
    }

    pub fn wants(&self, i: usize) -> bool {
        self.wanted[i]
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.wanted
            .iter()
            .enumerate()
            .filter(|(_, w)| **w)
            .map(|(i, _)| i)
    }
}

/// A scalar function of the parameters with an analytic gradient.
pub trait Objective {
    fn value_and_gradient(
        &self,
        params: &DenoiserParams,
        request: &GradRequest,
    ) -> Result<(f64, Gradients)>;

    fn value(&self, params: &DenoiserParams) -> Result<f64> {
        let none = GradRequest {
            wanted: vec![false; params.len()],
        };
        Ok(self.value_and_gradient(params, &none)?.0)
    }
}

/// Analytic gradient of `objective` for the requested tensors.
pub fn gradient(
    params: &DenoiserParams,
    objective: &dyn Objective,
    request: &GradRequest,
) -> Result<Gradients> {
    Ok(objective.value_and_gradient(params, request)?.1)
}
