//! Frame-sequence tensor shared by every stage of the pipeline.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Result, VmcError};

/// An `N x d` stack of flattened frames, each frame `height x width` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    frames: Array2<f64>,
    height: usize,
    width: usize,
}

impl VideoTensor {
    pub fn new(frames: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        let (n, d) = frames.dim();
        if n < 1 || d == 0 || height * width != d {
            return Err(VmcError::shape(
                format!("N >= 1 frames of {height}x{width}"),
                format!("{n}x{d}"),
            ));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(VmcError::InvalidRange("non-finite pixel".into()));
        }
        Ok(Self {
            frames,
            height,
            width,
        })
    }

    /// Builds a video from square frames; `d` must be a perfect square.
    pub fn from_square(frames: Array2<f64>) -> Result<Self> {
        let d = frames.ncols();
        let side = (d as f64).sqrt().round() as usize;
        Self::new(frames, side, side)
    }

    pub fn zeros(n: usize, height: usize, width: usize) -> Self {
        Self {
            frames: Array2::zeros((n, height * width)),
            height,
            width,
        }
    }

    pub fn standard_normal<R: Rng + ?Sized>(
        n: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let frames =
            Array2::from_shape_simple_fn((n, height * width), || rng.sample(StandardNormal));
        Self {
            frames,
            height,
            width,
        }
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut Array2<f64> {
        &mut self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn frame(&self, n: usize) -> ArrayView1<'_, f64> {
        self.frames.row(n)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frame_dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, n: usize, row: usize, col: usize) -> f64 {
        self.frames[[n, row * self.width + col]]
    }

    pub fn same_shape(&self, other: &VideoTensor) -> bool {
        self.frames.dim() == other.frames.dim()
            && self.height == other.height
            && self.width == other.width
    }

    pub fn check_same_shape(&self, other: &VideoTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(VmcError::shape(self.shape_string(), other.shape_string()))
        }
    }

    pub fn shape_string(&self) -> String {
        format!(
            "{}x{} ({}x{})",
            self.frame_count(),
            self.frame_dim(),
            self.height,
            self.width
        )
    }

    /// New tensor with the same geometry but different contents.
    pub fn with_frames(&self, frames: Array2<f64>) -> Result<Self> {
        Self::new(frames, self.height, self.width)
    }

    /// Frames `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        Self {
            frames: self.frames.slice(ndarray::s![start..end, ..]).to_owned(),
            height: self.height,
            width: self.width,
        }
    }

    pub fn select_frames(&self, indexes: &[usize]) -> Self {
        Self {
            frames: self.frames.select(Axis(0), indexes),
            height: self.height,
            width: self.width,
        }
    }

    /// Maps pixels in `[0,1]` to the `[-1,1]` signal space the diffusion models work in.
    pub fn to_signal(&self) -> Self {
        Self {
            frames: self.frames.mapv(|v| 2.0 * v - 1.0),
            height: self.height,
            width: self.width,
        }
    }

    pub fn from_signal(&self) -> Self {
        Self {
            frames: self.frames.mapv(|v| (v + 1.0) * 0.5),
            height: self.height,
            width: self.width,
        }
    }

    pub fn clamp_unit(&self) -> Self {
        Self {
            frames: self.frames.mapv(|v| v.clamp(0.0, 1.0)),
            height: self.height,
            width: self.width,
        }
    }

    pub fn mean_abs_error(&self, other: &VideoTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        let total: f64 = self
            .frames
            .iter()
            .zip(other.frames.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(total / self.frames.len() as f64)
    }

    /// Little-endian `f32` bytes, row-major.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.frames.len() * 4);
        for v in self.frames.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    /// SHA-256 of [`Self::to_f32_bytes`], hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_f32_bytes()))
    }

    pub fn from_f32_bytes(bytes: &[u8], n: usize, height: usize, width: usize) -> Result<Self> {
        let d = height * width;
        if bytes.len() != n * d * 4 {
            return Err(VmcError::shape(
                format!("{} bytes", n * d * 4),
                format!("{} bytes", bytes.len()),
            ));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let frames = Array2::from_shape_vec((n, d), data)
            .map_err(|e| VmcError::shape(format!("{n}x{d}"), e))?;
        Self::new(frames, height, width)
    }
}
