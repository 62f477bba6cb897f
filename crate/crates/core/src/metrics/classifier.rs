//! Factor classifier: softmax regressions over hand-built track, shape and
//! intensity features.

use serde::{Deserialize, Serialize};

use crate::conditioning::{AppearanceAttr, IntensityBand, MotionClass, Shape, StructuredPrompt};
use crate::corpus::{extract_centroid_track, CentroidTrack, FOREGROUND_THRESHOLD};
use crate::error::{Result, VmcError};
use crate::video::VideoTensor;

/// Held-out accuracy every head must reach before alignment scores are trusted.
pub const MIN_ACCURACY: f64 = 0.95;
const WINDOW: isize = 4;

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes x (features + 1)`, bias last.
    weights: Vec<Vec<f64>>,
}

impl SoftmaxRegression {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, l2: f64, iters: usize) -> Self {
        let f = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..f).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..f)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-12 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut v: Vec<f64> = r.iter().zip(&mean).zip(&scale).map(|((a, m), s)| (a - m) / s).collect();
                v.push(1.0);
                v
            })
            .collect();
        let mut model = Self {
            mean,
            scale,
            weights: vec![vec![0.0; f + 1]; classes],
        };
        // Adam on the mean cross-entropy.
        let (b1, b2, lr) = (0.9, 0.999, 0.05);
        let mut m = vec![vec![0.0; f + 1]; classes];
        let mut v = vec![vec![0.0; f + 1]; classes];
        for it in 1..=iters {
            let mut grad = vec![vec![0.0; f + 1]; classes];
            for (row, &label) in z.iter().zip(y) {
                let p = model.probs_standardized(row);
                for k in 0..classes {
                    let g = p[k] - if k == label { 1.0 } else { 0.0 };
                    for j in 0..=f {
                        grad[k][j] += g * row[j] / n;
                    }
                }
            }
            for k in 0..classes {
                for j in 0..=f {
                    let g = grad[k][j] + if j < f { l2 * model.weights[k][j] } else { 0.0 };
                    m[k][j] = b1 * m[k][j] + (1.0 - b1) * g;
                    v[k][j] = b2 * v[k][j] + (1.0 - b2) * g * g;
                    let mh = m[k][j] / (1.0 - b1.powi(it as i32));
                    let vh = v[k][j] / (1.0 - b2.powi(it as i32));
                    model.weights[k][j] -= lr * mh / (vh.sqrt() + 1e-8);
                }
            }
        }
        model
    }

    fn probs_standardized(&self, z: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((a, m), s)| (a - m) / s)
            .collect();
        z.push(1.0);
        self.probs_standardized(&z)
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Summary statistics of a centroid track's displacements.
pub struct TrackFeatures;

impl TrackFeatures {
    pub fn of(track: &CentroidTrack) -> Vec<f64> {
        let d = track.displacements();
        let k = d.len().max(1) as f64;
        let path: f64 = d.iter().map(|[a, b]| (a * a + b * b).sqrt()).sum::<f64>().max(1e-9);
        let net = d.iter().fold([0.0, 0.0], |acc, x| [acc[0] + x[0], acc[1] + x[1]]);
        let abs_row: f64 = d.iter().map(|x| x[0].abs()).sum();
        let abs_col: f64 = d.iter().map(|x| x[1].abs()).sum();
        let (mut cross, mut cross_abs, mut turns) = (0.0, 0.0, 0.0);
        for w in d.windows(2) {
            let (a, b) = (w[0], w[1]);
            let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
            let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
            if na * nb > 1e-9 {
                let c = (a[1] * b[0] - a[0] * b[1]) / (na * nb);
                cross += c;
                cross_abs += c.abs();
            }
            if a[0] * b[0] < 0.0 {
                turns += 1.0;
            }
        }
        vec![
            net[0] / path,
            net[1] / path,
            net[0] / k,
            net[1] / k,
            abs_row / path,
            abs_col / path,
            (net[0] * net[0] + net[1] * net[1]).sqrt() / path,
            cross / k,
            cross_abs / k,
            turns / k,
            path / k,
        ]
    }
}

fn bilinear(v: &VideoTensor, n: usize, r: f64, c: f64) -> f64 {
    let (h, w) = (v.height() as isize, v.width() as isize);
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let at = |rr: isize, cc: isize| -> f64 {
        if rr < 0 || cc < 0 || rr >= h || cc >= w {
            0.0
        } else {
            v.pixel(n, rr as usize, cc as usize)
        }
    };
    let (r0, c0) = (r0 as isize, c0 as isize);
    (1.0 - fr) * (1.0 - fc) * at(r0, c0)
        + (1.0 - fr) * fc * at(r0, c0 + 1)
        + fr * (1.0 - fc) * at(r0 + 1, c0)
        + fr * fc * at(r0 + 1, c0 + 1)
}

/// Soft foreground mask around the subject centroid, averaged over frames.
fn shape_features(v: &VideoTensor, track: &CentroidTrack) -> Vec<f64> {
    let side = (2 * WINDOW + 1) as usize;
    let mut out = vec![0.0; side * side];
    for n in 0..v.frame_count() {
        let [cr, cc] = track.points[n];
        for (i, dr) in (-WINDOW..=WINDOW).enumerate() {
            for (j, dc) in (-WINDOW..=WINDOW).enumerate() {
                let p = bilinear(v, n, cr + dr as f64, cc + dc as f64);
                out[i * side + j] += ((p - 0.4) / 0.2).clamp(0.0, 1.0);
            }
        }
    }
    let k = v.frame_count() as f64;
    out.iter_mut().for_each(|x| *x /= k);
    out
}

/// Order statistics of the above-threshold pixels.
fn intensity_features(v: &VideoTensor) -> Vec<f64> {
    let mut fg: Vec<f64> = v
        .frames()
        .iter()
        .copied()
        .filter(|p| *p > FOREGROUND_THRESHOLD)
        .collect();
    if fg.is_empty() {
        return vec![0.0; 5];
    }
    fg.sort_by(|a, b| a.total_cmp(b));
    let q = |f: f64| fg[((fg.len() - 1) as f64 * f).round() as usize];
    let mean = fg.iter().sum::<f64>() / fg.len() as f64;
    vec![q(0.5), q(0.75), q(0.9), mean, q(1.0)]
}

/// Per-factor class probabilities for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorProbabilities {
    pub motion: Vec<f64>,
    pub shape: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl FactorProbabilities {
    pub fn motion_class(&self) -> MotionClass {
        MotionClass::ALL[argmax(&self.motion)]
    }

    pub fn shape(&self) -> Shape {
        Shape::ALL[argmax(&self.shape)]
    }

    pub fn intensity(&self) -> IntensityBand {
        IntensityBand::ALL[argmax(&self.intensity)]
    }

    /// Mean probability of the prompt's motion class and appearance attributes.
    pub fn alignment(&self, p: &StructuredPrompt) -> f64 {
        let mut probs = vec![self.motion[p.motion.index()]];
        for a in &p.appearance {
            probs.push(match a {
                AppearanceAttr::Shape(s) => self.shape[s.index()],
                AppearanceAttr::Intensity(b) => self.intensity[b.index()],
            });
        }
        probs.iter().sum::<f64>() / probs.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierAccuracy {
    pub motion: f64,
    pub shape: f64,
    pub intensity: f64,
    pub validation_clips: usize,
}

impl ClassifierAccuracy {
    pub fn min(&self) -> f64 {
        self.motion.min(self.shape).min(self.intensity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorClassifier {
    motion: SoftmaxRegression,
    shape: SoftmaxRegression,
    intensity: SoftmaxRegression,
    pub accuracy: Option<ClassifierAccuracy>,
}

struct Features {
    motion: Vec<f64>,
    shape: Vec<f64>,
    intensity: Vec<f64>,
}

fn features(v: &VideoTensor) -> Features {
    let track = extract_centroid_track(v);
    Features {
        motion: TrackFeatures::of(&track),
        shape: shape_features(v, &track),
        intensity: intensity_features(v),
    }
}

fn labels(p: &StructuredPrompt) -> Result<(usize, usize, usize)> {
    let shape = p
        .shape()
        .ok_or_else(|| VmcError::Config("classifier training prompts need a shape".into()))?;
    let band = p
        .intensity()
        .ok_or_else(|| VmcError::Config("classifier training prompts need an intensity".into()))?;
    Ok((p.motion.index(), shape.index(), band.index()))
}

impl FactorClassifier {
    /// Fits every head on `train` and measures accuracy on `validation`.
    pub fn train(
        train: &[(VideoTensor, StructuredPrompt)],
        validation: &[(VideoTensor, StructuredPrompt)],
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(VmcError::EmptyCorpus);
        }
        let feats: Vec<Features> = train.iter().map(|(v, _)| features(v)).collect();
        let ys: Vec<(usize, usize, usize)> = train.iter().map(|(_, p)| labels(p)).collect::<Result<_>>()?;
        let column = |f: fn(&Features) -> &Vec<f64>| feats.iter().map(|x| f(x).clone()).collect::<Vec<_>>();
        let motion = SoftmaxRegression::fit(
            &column(|f| &f.motion),
            &ys.iter().map(|y| y.0).collect::<Vec<_>>(),
            MotionClass::ALL.len(),
            1e-4,
            1500,
        );
        let shape = SoftmaxRegression::fit(
            &column(|f| &f.shape),
            &ys.iter().map(|y| y.1).collect::<Vec<_>>(),
            Shape::ALL.len(),
            1e-4,
            1500,
        );
        let intensity = SoftmaxRegression::fit(
            &column(|f| &f.intensity),
            &ys.iter().map(|y| y.2).collect::<Vec<_>>(),
            IntensityBand::ALL.len(),
            1e-4,
            1500,
        );
        let mut model = Self {
            motion,
            shape,
            intensity,
            accuracy: None,
        };
        if !validation.is_empty() {
            model.accuracy = Some(model.evaluate(validation)?);
        }
        Ok(model)
    }

    pub fn evaluate(&self, clips: &[(VideoTensor, StructuredPrompt)]) -> Result<ClassifierAccuracy> {
        let (mut m, mut s, mut i) = (0usize, 0usize, 0usize);
        for (v, p) in clips {
            let (ym, ys, yi) = labels(p)?;
            let probs = self.predict(v);
            m += (argmax(&probs.motion) == ym) as usize;
            s += (argmax(&probs.shape) == ys) as usize;
            i += (argmax(&probs.intensity) == yi) as usize;
        }
        let n = clips.len().max(1) as f64;
        Ok(ClassifierAccuracy {
            motion: m as f64 / n,
            shape: s as f64 / n,
            intensity: i as f64 / n,
            validation_clips: clips.len(),
        })
    }

    pub fn predict(&self, v: &VideoTensor) -> FactorProbabilities {
        let f = features(v);
        FactorProbabilities {
            motion: self.motion.probs(&f.motion),
            shape: self.shape.probs(&f.shape),
            intensity: self.intensity.probs(&f.intensity),
        }
    }

    /// Fails unless every head reached [`MIN_ACCURACY`] on held-out clips.
    pub fn check_prerequisite(&self) -> Result<()> {
        match self.accuracy {
            None => Err(VmcError::MetricPrerequisite(
                "classifier has no held-out accuracy record".into(),
            )),
            Some(acc) if acc.min() < MIN_ACCURACY => Err(VmcError::MetricPrerequisite(format!(
                "classifier held-out accuracy {:.3}/{:.3}/{:.3} (motion/shape/intensity) below {MIN_ACCURACY}",
                acc.motion, acc.shape, acc.intensity
            ))),
            Some(_) => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
