//! Synthetic stand-ins for motion preservation, frame consistency and
//! text alignment.
//!
//! Reports name each stand-in explicitly (`trajectory-correlation`,
//! `raw-cosine-consistency`, `factor-classifier-alignment`) so their numbers
//! are never read as CLIP scores.

mod classifier;
mod report;

pub use classifier::{ClassifierAccuracy, FactorClassifier, FactorProbabilities, TrackFeatures};
pub use report::{markdown_table, write_metric_csv, MetricRow, SummaryRow};

use crate::conditioning::StructuredPrompt;
use crate::corpus::{extract_centroid_track, CentroidTrack};
use crate::error::{Result, VmcError};
use crate::video::VideoTensor;

pub const MOTION_METRIC: &str = "trajectory-correlation";
pub const CONSISTENCY_METRIC: &str = "raw-cosine-consistency";
pub const ALIGNMENT_METRIC: &str = "factor-classifier-alignment";

/// Indexes of `source_len` keyframes inside a video of `generated_len`
/// frames produced by inserting the same number of frames into every gap.
pub fn keyframe_indexes(source_len: usize, generated_len: usize) -> Result<Vec<usize>> {
    if source_len == generated_len {
        return Ok((0..source_len).collect());
    }
    if source_len < 2 || generated_len < source_len || !(generated_len - 1).is_multiple_of(source_len - 1) {
        return Err(VmcError::shape(
            format!("a multiple-of-gaps extension of {source_len} frames"),
            format!("{generated_len} frames"),
        ));
    }
    let k = (generated_len - 1) / (source_len - 1);
    Ok((0..source_len).map(|i| i * k).collect())
}

/// Correlation of the per-frame displacement vectors of two tracks.
///
/// Each axis contributes the uncentred correlation of its displacement
/// sequences, and the axes are averaged with weights proportional to
/// `sqrt(energy_a * energy_b)`. Returns NaN when either track is static.
pub fn track_correlation(a: &CentroidTrack, b: &CentroidTrack) -> f64 {
    let (da, db) = (a.displacements(), b.displacements());
    let mut num = 0.0;
    let (mut ea, mut eb) = (0.0, 0.0);
    for (x, y) in da.iter().zip(&db) {
        num += x[0] * y[0] + x[1] * y[1];
        ea += x[0] * x[0] + x[1] * x[1];
        eb += y[0] * y[0] + y[1] * y[1];
    }
    if ea < 1e-12 || eb < 1e-12 {
        return f64::NAN;
    }
    (num / (ea * eb).sqrt()).clamp(-1.0, 1.0)
}

/// Trajectory correlation between the subject tracks of `source` and
/// `generated`; longer generated videos are read at the keyframe indexes.
pub fn motion_preservation(source: &VideoTensor, generated: &VideoTensor) -> Result<f64> {
    let idx = keyframe_indexes(source.frame_count(), generated.frame_count())?;
    let a = extract_centroid_track(source);
    let b = extract_centroid_track(generated).subsample(&idx);
    Ok(track_correlation(&a, &b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    pub score: f64,
    /// Pairs skipped because a centred frame was all zeros.
    pub skipped_pairs: usize,
}

/// Mean pairwise cosine similarity of mean-subtracted frames, mapped to
/// `[0,1]` by `(1 + cos) / 2`.
pub fn frame_consistency(v: &VideoTensor) -> Result<Consistency> {
    let n = v.frame_count();
    if n < 2 {
        return Err(VmcError::InvalidRange("frame consistency needs N >= 2".into()));
    }
    let centred: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let f = v.frame(i);
            let mean = f.mean().unwrap_or(0.0);
            f.iter().map(|x| x - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centred.iter().map(|f| f.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let (mut total, mut pairs, mut skipped) = (0.0, 0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            if norms[i] < 1e-12 || norms[j] < 1e-12 {
                skipped += 1;
                continue;
            }
            let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            total += 0.5 * (1.0 + dot / (norms[i] * norms[j]));
            pairs += 1;
        }
    }
    let score = if pairs == 0 { f64::NAN } else { total / pairs as f64 };
    Ok(Consistency {
        score,
        skipped_pairs: skipped,
    })
}

/// Mean classifier probability of the prompt's motion class and of each
/// appearance attribute it lists.
pub fn prompt_alignment(
    v: &VideoTensor,
    p: &StructuredPrompt,
    classifier: Option<&FactorClassifier>,
) -> Result<f64> {
    let classifier = classifier.ok_or_else(|| {
        VmcError::MetricPrerequisite("prompt alignment needs a trained factor classifier".into())
    })?;
    classifier.check_prerequisite()?;
    Ok(classifier.predict(v).alignment(p))
}

#[cfg(test)]
mod tests;
