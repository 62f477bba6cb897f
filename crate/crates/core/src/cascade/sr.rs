//! Learned 2x spatial upscaler.
//!
//! Every low-resolution pixel becomes a 2x2 block. A bias-free tanh MLP maps
//! the eight neighbour differences around the pixel to four sub-pixel
//! offsets, which are re-centred so the block mean equals the input pixel.
//! Average pooling therefore inverts the upscaler exactly, and a constant
//! frame maps to a constant frame.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioning::MotionClass;
use crate::corpus::{ClipSpec, FRAME_SIDE, KEYFRAMES};
use crate::error::{Result, VmcError};
use crate::optim::{AdamW, AdamWConfig};
use crate::video::VideoTensor;

const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpscalerConfig {
    pub hidden: usize,
    pub steps: usize,
    /// Pixels per minibatch.
    pub batch: usize,
    pub clips: usize,
    pub optimizer: AdamWConfig,
}

impl Default for UpscalerConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            steps: 1500,
            batch: 2048,
            clips: 96,
            optimizer: AdamWConfig {
                lr: 3e-3,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
        }
    }
}

/// Weights of the upscaler: `8 -> hidden -> hidden -> 4`, no biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Upscaler {
    pub input_side: usize,
    pub weights: Vec<Array2<f64>>,
}

struct Activations {
    x: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
}

/// Neighbour differences for every pixel of one frame, replicating edges.
fn features(frame: &[f64], side: usize) -> Array2<f64> {
    let mut x = Array2::zeros((side * side, NEIGHBOURS.len()));
    for r in 0..side {
        for c in 0..side {
            let centre = frame[r * side + c];
            for (k, (dr, dc)) in NEIGHBOURS.iter().enumerate() {
                let rr = (r as isize + dr).clamp(0, side as isize - 1) as usize;
                let cc = (c as isize + dc).clamp(0, side as isize - 1) as usize;
                x[[r * side + c, k]] = frame[rr * side + cc] - centre;
            }
        }
    }
    x
}

/// Subtracts each row's mean, the projection onto zero-mean sub-pixel offsets.
fn centre_rows(a: &Array2<f64>) -> Array2<f64> {
    let mean = a.mean_axis(Axis(1)).expect("non-empty rows");
    a - &mean.insert_axis(Axis(1))
}

impl Upscaler {
    pub fn init(input_side: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |i: usize, o: usize| {
            let n = Normal::new(0.0, (1.0 / i as f64).sqrt()).expect("finite std");
            Array2::from_shape_fn((i, o), |_| n.sample(&mut rng))
        };
        let weights = vec![
            layer(NEIGHBOURS.len(), hidden),
            layer(hidden, hidden),
            layer(hidden, 4),
        ];
        Self { input_side, weights }
    }

    fn forward(&self, x: Array2<f64>) -> (Array2<f64>, Activations) {
        let h1 = x.dot(&self.weights[0]).mapv(f64::tanh);
        let h2 = h1.dot(&self.weights[1]).mapv(f64::tanh);
        let out = centre_rows(&h2.dot(&self.weights[2]));
        (out, Activations { x, h1, h2 })
    }

    fn backward(&self, acts: &Activations, d_out: &Array2<f64>) -> Vec<Array2<f64>> {
        let d_raw = centre_rows(d_out);
        let g2 = acts.h2.t().dot(&d_raw);
        let d_h2 = d_raw.dot(&self.weights[2].t()) * acts.h2.mapv(|h| 1.0 - h * h);
        let g1 = acts.h1.t().dot(&d_h2);
        let d_h1 = d_h2.dot(&self.weights[1].t()) * acts.h1.mapv(|h| 1.0 - h * h);
        let g0 = acts.x.t().dot(&d_h1);
        vec![g0, g1, g2]
    }

    /// Sub-pixel offsets `(pixels, 4)` in row-major block order.
    fn offsets(&self, frame: &[f64]) -> Array2<f64> {
        self.forward(features(frame, self.input_side)).0
    }

    /// Upscales every frame 2x per axis.
    pub fn upscale(&self, video: &VideoTensor) -> Result<VideoTensor> {
        super_resolve(video, self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let up: Upscaler = serde_json::from_str(text)?;
        let dims: Vec<(usize, usize)> = up.weights.iter().map(|w| w.dim()).collect();
        let ok = dims.len() == 3
            && dims[0].0 == NEIGHBOURS.len()
            && dims[1] == (dims[0].1, dims[0].1)
            && dims[2] == (dims[0].1, 4);
        if !ok {
            return Err(VmcError::Checkpoint(format!("bad upscaler layer shapes {dims:?}")));
        }
        Ok(up)
    }

    /// SHA-256 over the weights as little-endian `f64`.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.weights {
            for v in w.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Upscales each `side x side` frame to `2side x 2side`.
pub fn super_resolve(video: &VideoTensor, model: &Upscaler) -> Result<VideoTensor> {
    let side = model.input_side;
    if video.height() != side || video.width() != side {
        return Err(VmcError::shape(
            format!("{side}x{side} frames"),
            video.shape_string(),
        ));
    }
    let out_side = 2 * side;
    let mut out = Array2::zeros((video.frame_count(), out_side * out_side));
    for n in 0..video.frame_count() {
        let frame = video.frame(n).to_vec();
        let off = model.offsets(&frame);
        for r in 0..side {
            for c in 0..side {
                let p = r * side + c;
                for (k, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    out[[n, (2 * r + dr) * out_side + 2 * c + dc]] = frame[p] + off[[p, k]];
                }
            }
        }
    }
    VideoTensor::new(out, out_side, out_side)
}

/// 2x2 average pooling of every frame.
pub fn downsample(video: &VideoTensor) -> Result<VideoTensor> {
    let (h, w) = (video.height(), video.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(VmcError::shape("even frame sides", video.shape_string()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let out = Array2::from_shape_fn((video.frame_count(), oh * ow), |(n, p)| {
        let (r, c) = (p / ow, p % ow);
        (video.pixel(n, 2 * r, 2 * c)
            + video.pixel(n, 2 * r, 2 * c + 1)
            + video.pixel(n, 2 * r + 1, 2 * c)
            + video.pixel(n, 2 * r + 1, 2 * c + 1))
            / 4.0
    });
    VideoTensor::new(out, oh, ow)
}

/// Per-pixel training pairs: features and the target sub-pixel offsets.
fn training_pairs(clips: usize, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = FRAME_SIDE;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..clips {
        let spec = ClipSpec::sample(MotionClass::ALL[i % MotionClass::ALL.len()], KEYFRAMES, &mut rng);
        let times: Vec<f64> = (0..KEYFRAMES).map(|n| n as f64).collect();
        let (low, high) = spec.render_at(&times)?;
        for n in 0..low.frame_count() {
            let frame = low.frame(n).to_vec();
            xs.push(features(&frame, side));
            let mut y = Array2::zeros((side * side, 4));
            for r in 0..side {
                for c in 0..side {
                    for (k, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                        y[[r * side + c, k]] = high.pixel(n, 2 * r + dr, 2 * c + dc) - frame[r * side + c];
                    }
                }
            }
            ys.push(y);
        }
    }
    let xv: Vec<_> = xs.iter().map(|a| a.view()).collect();
    let yv: Vec<_> = ys.iter().map(|a| a.view()).collect();
    let x = ndarray::concatenate(Axis(0), &xv).map_err(|e| VmcError::Config(e.to_string()))?;
    let y = ndarray::concatenate(Axis(0), &yv).map_err(|e| VmcError::Config(e.to_string()))?;
    Ok((x, y))
}

/// Fits the upscaler by minibatch MSE on rendered low/high pairs. Returns the
/// model and the per-step loss.
pub fn train_upscaler(cfg: &UpscalerConfig, seed: u64) -> Result<(Upscaler, Vec<f64>)> {
    if cfg.steps == 0 || cfg.batch == 0 || cfg.hidden == 0 || cfg.clips == 0 {
        return Err(VmcError::Config("upscaler sizes must be positive".into()));
    }
    let (x, y) = training_pairs(cfg.clips, seed)?;
    let mut model = Upscaler::init(FRAME_SIDE, cfg.hidden, seed ^ 0x7570);
    let mut opt = AdamW::for_tensors(cfg.optimizer, &model.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7368_7566);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        if cursor + cfg.batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..(cursor + cfg.batch).min(order.len())];
        cursor += cfg.batch;
        let xb = x.select(Axis(0), idx);
        let yb = y.select(Axis(0), idx);
        let (out, acts) = model.forward(xb);
        let diff = out - &yb;
        let count = diff.len() as f64;
        losses.push(diff.iter().map(|d| d * d).sum::<f64>() / count);
        let grads = model.backward(&acts, &(diff * (2.0 / count)));
        opt.step_tensors(&mut model.weights, &grads, cfg.optimizer.lr);
    }
    Ok((model, losses))
}
