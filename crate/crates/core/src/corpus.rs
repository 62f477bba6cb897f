//! Procedural moving-shape clips with factored motion, appearance and background.
//!
//! Geometry is continuous, in keyframe pixel units: pixel `(r, c)` covers
//! `[r, r+1) x [c, c+1)`. Frames are rendered at twice the keyframe
//! resolution with 4x4 supersampling and the keyframe resolution is the 2x2
//! average of that, so the two resolutions always agree.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    BackgroundLevel, IntensityBand, MotionClass, Shape, StructuredPrompt, Texture,
};
use crate::error::{Result, VmcError};
use crate::video::VideoTensor;

pub const FRAME_SIDE: usize = 16;
pub const HIGH_SIDE: usize = 32;
pub const KEYFRAMES: usize = 8;
/// Minimum distance from the subject centre to the frame border.
pub const MARGIN: f64 = 3.6;
/// Foreground threshold on normalized intensity.
pub const FOREGROUND_THRESHOLD: f64 = 0.5;
pub const GENERATOR_VERSION: &str = "moving-shapes-1";

const SUPERSAMPLE: usize = 4;
const TEXTURE_AMPLITUDE: f64 = 0.08;

pub fn intensity_value(band: IntensityBand) -> f64 {
    match band {
        IntensityBand::Dim => 0.62,
        IntensityBand::Medium => 0.74,
        IntensityBand::Bright => 0.86,
        IntensityBand::Vivid => 0.98,
    }
}

pub fn level_value(level: BackgroundLevel) -> f64 {
    match level {
        BackgroundLevel::Black => 0.06,
        BackgroundLevel::Dark => 0.14,
        BackgroundLevel::Gray => 0.22,
        BackgroundLevel::Pale => 0.30,
    }
}

/// Whether the offset `(dy, dx)` from the subject centre lies inside `shape`.
fn inside(shape: Shape, dy: f64, dx: f64) -> bool {
    match shape {
        Shape::Square => dx.abs() <= 2.5 && dy.abs() <= 2.5,
        Shape::Disk => dx * dx + dy * dy <= 2.6 * 2.6,
        Shape::Diamond => dx.abs() + dy.abs() <= 3.5,
        Shape::Plus => {
            (dx.abs() <= 1.0 && dy.abs() <= 3.2) || (dy.abs() <= 1.0 && dx.abs() <= 3.2)
        }
        Shape::Cross => {
            dx.abs() <= 3.0 && dy.abs() <= 3.0 && ((dx - dy).abs() <= 1.3 || (dx + dy).abs() <= 1.3)
        }
        Shape::Triangle => {
            // Apex up, centroid at the origin.
            let (ay, ax, by, bx, cy, cx) = (-3.2, 0.0, 1.6, -3.3, 1.6, 3.3);
            let edge = |py: f64, px: f64, qy: f64, qx: f64| (qx - px) * (dy - py) - (qy - py) * (dx - px);
            let (e1, e2, e3) = (edge(ay, ax, by, bx), edge(by, bx, cy, cx), edge(cy, cx, ay, ax));
            (e1 <= 0.0 && e2 <= 0.0 && e3 <= 0.0) || (e1 >= 0.0 && e2 >= 0.0 && e3 >= 0.0)
        }
        Shape::HBar => dx.abs() <= 3.5 && dy.abs() <= 1.25,
        Shape::VBar => dx.abs() <= 1.25 && dy.abs() <= 3.5,
    }
}

/// Per-class kinematics. Positions are `[row, col]` of the subject centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub class: MotionClass,
    /// Starting centre (translations, bounce) or orbit centre.
    pub start: [f64; 2],
    /// Pixels per keyframe, `[row, col]`.
    pub velocity: [f64; 2],
    /// Hop height (bounce) or orbit radius.
    pub amplitude: f64,
    /// Keyframes per hop (bounce) or per revolution (orbit).
    pub period: f64,
    pub phase: f64,
}

impl MotionSpec {
    /// Constant-velocity motion.
    pub fn translation(class: MotionClass, start: [f64; 2], velocity: [f64; 2]) -> Self {
        Self {
            class,
            start,
            velocity,
            amplitude: 0.0,
            period: 1.0,
            phase: 0.0,
        }
    }

    /// Subject centre at keyframe time `tau` (fractional times interpolate).
    pub fn position(&self, tau: f64) -> [f64; 2] {
        match self.class {
            MotionClass::Bounce => [
                self.start[0] - self.amplitude * (PI * tau / self.period).sin().abs(),
                self.start[1] + self.velocity[1] * tau,
            ],
            MotionClass::Orbit => {
                let angle = self.phase + 2.0 * PI * tau / self.period;
                [
                    self.start[0] + self.amplitude * angle.sin(),
                    self.start[1] + self.amplitude * angle.cos(),
                ]
            }
            _ => [
                self.start[0] + self.velocity[0] * tau,
                self.start[1] + self.velocity[1] * tau,
            ],
        }
    }

    /// Checks that the subject stays inside the frame over `[0, frames - 1]`.
    pub fn validate(&self, frames: usize) -> Result<()> {
        let lo = MARGIN;
        let hi = FRAME_SIDE as f64 - MARGIN;
        let samples = 8 * frames.max(2);
        for i in 0..=samples {
            let tau = (frames.max(2) - 1) as f64 * i as f64 / samples as f64;
            let [r, c] = self.position(tau);
            if !(lo - 1e-9..=hi + 1e-9).contains(&r) || !(lo - 1e-9..=hi + 1e-9).contains(&c) {
                return Err(VmcError::OutOfBounds(format!(
                    "{} reaches ({r:.2}, {c:.2}) at t={tau:.2}",
                    self.class
                )));
            }
        }
        Ok(())
    }

    /// Random in-bounds kinematics for `class` over `frames` keyframes.
    pub fn sample<R: Rng + ?Sized>(class: MotionClass, frames: usize, rng: &mut R) -> Self {
        let span = (frames.max(2) - 1) as f64;
        let lo = MARGIN;
        let hi = FRAME_SIDE as f64 - MARGIN;
        fn free<R: Rng + ?Sized>(rng: &mut R, travel: f64) -> f64 {
            let room = (FRAME_SIDE as f64 - 2.0 * MARGIN - travel).max(0.0);
            MARGIN + rng.random::<f64>() * room
        }
        let spec = match class {
            MotionClass::TranslateRight
            | MotionClass::TranslateLeft
            | MotionClass::TranslateUp
            | MotionClass::TranslateDown => {
                let speed = (0.85 + 0.3 * rng.random::<f64>()).min((hi - lo) / span);
                let travel = speed * span;
                let along = free(rng, travel);
                let across = free(rng, 0.0);
                let (start, velocity) = match class {
                    MotionClass::TranslateRight => ([across, along], [0.0, speed]),
                    MotionClass::TranslateLeft => ([across, along + travel], [0.0, -speed]),
                    MotionClass::TranslateDown => ([along, across], [speed, 0.0]),
                    _ => ([along + travel, across], [-speed, 0.0]),
                };
                Self::translation(class, start, velocity)
            }
            MotionClass::DiagonalDown | MotionClass::DiagonalUp => {
                let speed = (0.8 + 0.3 * rng.random::<f64>()).min((hi - lo) / span);
                let travel = speed * span;
                let col = free(rng, travel);
                let row = free(rng, travel);
                if class == MotionClass::DiagonalDown {
                    Self::translation(class, [row, col], [speed, speed])
                } else {
                    Self::translation(class, [row + travel, col], [-speed, speed])
                }
            }
            MotionClass::Bounce => {
                let amplitude = 3.5 + 1.5 * rng.random::<f64>();
                let floor = hi - rng.random::<f64>() * (hi - lo - amplitude).max(0.0);
                let col = free(rng, 0.0);
                Self {
                    class,
                    start: [floor, col],
                    velocity: [0.0, 0.0],
                    amplitude,
                    period: span / 2.0,
                    phase: 0.0,
                }
            }
            MotionClass::Orbit => {
                let amplitude = 2.4 + 0.8 * rng.random::<f64>();
                let room = hi - lo - 2.0 * amplitude;
                let start = [
                    lo + amplitude + rng.random::<f64>() * room,
                    lo + amplitude + rng.random::<f64>() * room,
                ];
                Self {
                    class,
                    start,
                    velocity: [0.0, 0.0],
                    amplitude,
                    period: span * 8.0 / 7.0,
                    phase: 2.0 * PI * rng.random::<f64>(),
                }
            }
        };
        debug_assert!(spec.validate(frames).is_ok(), "{spec:?}");
        spec
    }
}

/// Everything needed to render one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub motion: MotionSpec,
    pub shape: Shape,
    pub intensity: IntensityBand,
    pub texture: Texture,
    pub level: BackgroundLevel,
    /// Drives the grain texture and pixel noise.
    pub seed: u64,
    #[serde(default)]
    pub noise_std: f64,
}

impl ClipSpec {
    pub fn prompt(&self) -> StructuredPrompt {
        StructuredPrompt::full(
            self.motion.class,
            self.shape,
            self.intensity,
            self.texture,
            self.level,
        )
    }

    /// Same motion and seed, different appearance and background.
    pub fn with_context(
        &self,
        shape: Shape,
        intensity: IntensityBand,
        texture: Texture,
        level: BackgroundLevel,
    ) -> Self {
        Self {
            shape,
            intensity,
            texture,
            level,
            ..self.clone()
        }
    }

    /// Random clip of `class` with every other factor drawn from `rng`.
    pub fn sample<R: Rng + ?Sized>(class: MotionClass, frames: usize, rng: &mut R) -> Self {
        let motion = MotionSpec::sample(class, frames, rng);
        Self {
            motion,
            shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
            intensity: IntensityBand::ALL[rng.random_range(0..IntensityBand::ALL.len())],
            texture: Texture::ALL[rng.random_range(0..Texture::ALL.len())],
            level: BackgroundLevel::ALL[rng.random_range(0..BackgroundLevel::ALL.len())],
            seed: rng.random(),
            noise_std: 0.0,
        }
    }

    fn background(&self, hr: usize, hc: usize) -> f64 {
        let base = level_value(self.level);
        let bump = match self.texture {
            Texture::Flat => 0.0,
            Texture::Stripes => (hr / 4).is_multiple_of(2) as u8 as f64,
            Texture::Checker => (hr / 4 + hc / 4).is_multiple_of(2) as u8 as f64,
            Texture::Grain => {
                let mut x = self.seed ^ ((hr as u64) << 32 | hc as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                x ^= x >> 33;
                x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
                x ^= x >> 33;
                (x >> 11) as f64 / (1u64 << 53) as f64
            }
        };
        base + TEXTURE_AMPLITUDE * bump
    }

    /// One `HIGH_SIDE x HIGH_SIDE` frame with the subject centred at `pos`.
    fn render_high(&self, pos: [f64; 2]) -> Vec<f64> {
        let fg = intensity_value(self.intensity);
        let mut out = vec![0.0; HIGH_SIDE * HIGH_SIDE];
        let sub = 1.0 / (2 * SUPERSAMPLE) as f64;
        for hr in 0..HIGH_SIDE {
            for hc in 0..HIGH_SIDE {
                let mut hits = 0;
                for i in 0..SUPERSAMPLE {
                    for j in 0..SUPERSAMPLE {
                        let y = hr as f64 * 0.5 + (i as f64 + 0.5) * sub;
                        let x = hc as f64 * 0.5 + (j as f64 + 0.5) * sub;
                        if inside(self.shape, y - pos[0], x - pos[1]) {
                            hits += 1;
                        }
                    }
                }
                let cov = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                out[hr * HIGH_SIDE + hc] = cov * fg + (1.0 - cov) * self.background(hr, hc);
            }
        }
        out
    }

    /// Renders the clip at arbitrary keyframe times, returning the
    /// `(keyframe resolution, double resolution)` pair.
    pub fn render_at(&self, times: &[f64]) -> Result<(VideoTensor, VideoTensor)> {
        if times.is_empty() {
            return Err(VmcError::Config("no frame times to render".into()));
        }
        let mut low = Array2::zeros((times.len(), FRAME_SIDE * FRAME_SIDE));
        let mut high = Array2::zeros((times.len(), HIGH_SIDE * HIGH_SIDE));
        let mut noise_rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x006e_6f69_7365);
        let noise = Normal::new(0.0, self.noise_std.max(1e-300)).expect("noise std");
        for (f, tau) in times.iter().enumerate() {
            let frame = self.render_high(self.motion.position(*tau));
            for (i, v) in frame.iter().enumerate() {
                high[[f, i]] = *v;
            }
            for r in 0..FRAME_SIDE {
                for c in 0..FRAME_SIDE {
                    let sum = frame[2 * r * HIGH_SIDE + 2 * c]
                        + frame[2 * r * HIGH_SIDE + 2 * c + 1]
                        + frame[(2 * r + 1) * HIGH_SIDE + 2 * c]
                        + frame[(2 * r + 1) * HIGH_SIDE + 2 * c + 1];
                    low[[f, r * FRAME_SIDE + c]] = sum / 4.0;
                }
            }
            if self.noise_std > 0.0 {
                for v in low.row_mut(f).iter_mut() {
                    *v = (*v + noise.sample(&mut noise_rng)).clamp(0.0, 1.0);
                }
            }
        }
        Ok((
            VideoTensor::new(low, FRAME_SIDE, FRAME_SIDE)?,
            VideoTensor::new(high, HIGH_SIDE, HIGH_SIDE)?,
        ))
    }

    /// Ground-truth centroid track in pixel-index coordinates.
    pub fn ground_truth_track(&self, frames: usize) -> Vec<[f64; 2]> {
        (0..frames)
            .map(|n| {
                let [r, c] = self.motion.position(n as f64);
                [r - 0.5, c - 0.5]
            })
            .collect()
    }
}

/// Renders `frames` keyframes of `spec`; the prompt records every factor.
pub fn generate_clip(spec: &ClipSpec, frames: usize) -> Result<(VideoTensor, StructuredPrompt)> {
    if frames < 2 {
        return Err(VmcError::InvalidRange(format!(
            "clips need at least 2 frames, got {frames}"
        )));
    }
    spec.motion.validate(frames)?;
    let times: Vec<f64> = (0..frames).map(|n| n as f64).collect();
    let (low, _) = spec.render_at(&times)?;
    Ok((low, spec.prompt()))
}

/// Frames in reverse order.
pub fn reverse_clip(v: &VideoTensor) -> VideoTensor {
    let order: Vec<usize> = (0..v.frame_count()).rev().collect();
    v.select_frames(&order)
}

/// Per-frame subject centroid, `[row, col]` in pixel-index coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTrack {
    pub points: Vec<[f64; 2]>,
    /// Frames with no foreground pixel; their position is carried over.
    pub missing: Vec<usize>,
}

impl CentroidTrack {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn displacements(&self) -> Vec<[f64; 2]> {
        self.points
            .windows(2)
            .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
            .collect()
    }

    pub fn subsample(&self, indexes: &[usize]) -> CentroidTrack {
        CentroidTrack {
            points: indexes.iter().map(|i| self.points[*i]).collect(),
            missing: self
                .missing
                .iter()
                .filter_map(|m| indexes.iter().position(|i| i == m))
                .collect(),
        }
    }
}

/// Subject centroid of one frame: pixels above [`FOREGROUND_THRESHOLD`] and
/// their 8-neighbours, weighted by intensity above the median of the
/// remaining (background) pixels.
fn frame_centroid(v: &VideoTensor, n: usize) -> Option<[f64; 2]> {
    let (h, w) = (v.height(), v.width());
    let frame = v.frame(n);
    let above: Vec<bool> = frame.iter().map(|p| *p > FOREGROUND_THRESHOLD).collect();
    if !above.iter().any(|a| *a) {
        return None;
    }
    let mut region = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if above[r * w + c] {
                for rr in r.saturating_sub(1)..(r + 2).min(h) {
                    for cc in c.saturating_sub(1)..(c + 2).min(w) {
                        region[rr * w + cc] = true;
                    }
                }
            }
        }
    }
    let mut outside: Vec<f64> = frame
        .iter()
        .zip(&region)
        .filter(|(_, inside)| !**inside)
        .map(|(p, _)| *p)
        .collect();
    let background = if outside.is_empty() {
        0.0
    } else {
        outside.sort_by(|a, b| a.total_cmp(b));
        outside[outside.len() / 2]
    };
    let (mut wsum, mut rsum, mut csum) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if region[r * w + c] {
                let weight = (frame[r * w + c].min(1.0) - background).max(0.0);
                wsum += weight;
                rsum += weight * r as f64;
                csum += weight * c as f64;
            }
        }
    }
    (wsum > 0.0).then(|| [rsum / wsum, csum / wsum])
}

/// Per-frame subject centroids; frames without foreground are flagged and
/// keep the previous position.
pub fn extract_centroid_track(v: &VideoTensor) -> CentroidTrack {
    let raw: Vec<Option<[f64; 2]>> = (0..v.frame_count()).map(|n| frame_centroid(v, n)).collect();
    let missing: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_none())
        .map(|(i, _)| i)
        .collect();
    let centre = [(v.height() as f64 - 1.0) / 2.0, (v.width() as f64 - 1.0) / 2.0];
    let first = raw.iter().flatten().next().copied().unwrap_or(centre);
    let mut last = first;
    let points = raw
        .into_iter()
        .map(|p| {
            if let Some(p) = p {
                last = p;
            }
            last
        })
        .collect();
    CentroidTrack { points, missing }
}

/// Recovers the motion class from the shape of a centroid track.
pub fn classify_track(track: &CentroidTrack) -> MotionClass {
    let d = track.displacements();
    let path: f64 = d.iter().map(|[dr, dc]| (dr * dr + dc * dc).sqrt()).sum();
    let first = track.points[0];
    let last = track.points[track.len() - 1];
    let net = [last[0] - first[0], last[1] - first[1]];
    let net_len = (net[0] * net[0] + net[1] * net[1]).sqrt();
    if path > 0.0 && net_len / path > 0.75 {
        let candidates = [
            (MotionClass::TranslateRight, [0.0, 1.0]),
            (MotionClass::TranslateLeft, [0.0, -1.0]),
            (MotionClass::TranslateDown, [1.0, 0.0]),
            (MotionClass::TranslateUp, [-1.0, 0.0]),
            (MotionClass::DiagonalDown, [1.0, 1.0]),
            (MotionClass::DiagonalUp, [-1.0, 1.0]),
        ];
        return candidates
            .iter()
            .map(|(cls, dir)| {
                let norm = dir[0] * dir[0] + dir[1] * dir[1];
                (*cls, (net[0] * dir[0] + net[1] * dir[1]) / norm.sqrt())
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
            .unwrap();
    }
    let horizontal: f64 = d.iter().map(|[_, dc]| dc.abs()).sum();
    let vertical: f64 = d.iter().map(|[dr, _]| dr.abs()).sum();
    if horizontal < 0.35 * vertical {
        MotionClass::Bounce
    } else {
        MotionClass::Orbit
    }
}

/// `(motion, shape)` compositions withheld from base training.
pub fn is_held_out(motion: MotionClass, shape: Shape) -> bool {
    shape.index() == (motion.index() * 3 + 1) % Shape::ALL.len()
}

/// The shape withheld for `motion`.
pub fn held_out_shape(motion: MotionClass) -> Shape {
    Shape::from_index((motion.index() * 3 + 1) % Shape::ALL.len()).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    HeldOut,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub spec: ClipSpec,
    pub video: VideoTensor,
    pub prompt: StructuredPrompt,
    pub split: Split,
}

/// `count` training clips cycling through motion classes and every shape
/// that is not held out for that class.
pub fn build_training_corpus(count: usize, frames: usize, seed: u64) -> Result<Vec<CorpusEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let motion = MotionClass::ALL[i % MotionClass::ALL.len()];
        let allowed: Vec<Shape> = Shape::ALL
            .iter()
            .copied()
            .filter(|s| !is_held_out(motion, *s))
            .collect();
        let mut spec = ClipSpec::sample(motion, frames, &mut rng);
        spec.shape = allowed[(i / MotionClass::ALL.len()) % allowed.len()];
        let (video, prompt) = generate_clip(&spec, frames)?;
        out.push(CorpusEntry {
            id: format!("train-{i:04}"),
            spec,
            video,
            prompt,
            split: Split::Train,
        });
    }
    Ok(out)
}

/// A clip of a held-out `(motion, shape)` composition.
pub fn held_out_clip(motion: MotionClass, frames: usize, seed: u64) -> Result<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4c44);
    let mut spec = ClipSpec::sample(motion, frames, &mut rng);
    spec.shape = held_out_shape(motion);
    let (video, prompt) = generate_clip(&spec, frames)?;
    Ok(CorpusEntry {
        id: format!("heldout-{}-{seed}", motion.name()),
        spec,
        video,
        prompt,
        split: Split::HeldOut,
    })
}

/// JSON header of the clip container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipHeader {
    #[serde(rename = "N")]
    pub frames: usize,
    pub d: usize,
    pub height: usize,
    pub width: usize,
    pub prompt: Option<StructuredPrompt>,
    pub seed: Option<u64>,
    pub generator_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ClipSpec>,
}

impl ClipHeader {
    pub fn for_video(v: &VideoTensor) -> Self {
        Self {
            frames: v.frame_count(),
            d: v.frame_dim(),
            height: v.height(),
            width: v.width(),
            prompt: None,
            seed: None,
            generator_version: GENERATOR_VERSION.to_string(),
            spec: None,
        }
    }
}

const CLIP_MAGIC: &[u8; 8] = b"VMCCLIP1";

/// Container: magic, `u32` LE header length, JSON header, row-major LE `f32` frames.
pub fn write_clip(path: &Path, video: &VideoTensor, header: &ClipHeader) -> Result<()> {
    if header.frames != video.frame_count() || header.d != video.frame_dim() {
        return Err(VmcError::shape(
            format!("{}x{}", header.frames, header.d),
            video.shape_string(),
        ));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let json = serde_json::to_vec(header)?;
    let mut f = fs::File::create(path)?;
    f.write_all(CLIP_MAGIC)?;
    f.write_all(&(json.len() as u32).to_le_bytes())?;
    f.write_all(&json)?;
    f.write_all(&video.to_f32_bytes())?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<(VideoTensor, ClipHeader)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != CLIP_MAGIC {
        return Err(VmcError::Config(format!(
            "{} is not a clip container",
            path.display()
        )));
    }
    let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if bytes.len() < 12 + len {
        return Err(VmcError::Config(format!("{} is truncated", path.display())));
    }
    let header: ClipHeader = serde_json::from_slice(&bytes[12..12 + len])?;
    let video =
        VideoTensor::from_f32_bytes(&bytes[12 + len..], header.frames, header.height, header.width)?;
    Ok((video, header))
}

/// One line of the corpus index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub file: String,
    pub prompt: StructuredPrompt,
    pub seed: u64,
    pub split: Split,
}

pub fn write_index(path: &Path, entries: &[IndexEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<Vec<IndexEntry>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(VmcError::from))
        .collect()
}
