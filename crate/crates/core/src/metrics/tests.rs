use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{BackgroundLevel, IntensityBand, MotionClass, Shape, Texture};
use crate::corpus::{build_training_corpus, generate_clip, held_out_clip, reverse_clip, ClipSpec};

fn clip(class: MotionClass, seed: u64) -> (VideoTensor, ClipSpec) {
    let spec = ClipSpec::sample(class, 8, &mut ChaCha8Rng::seed_from_u64(seed));
    (generate_clip(&spec, 8).unwrap().0, spec)
}

#[test]
fn identical_and_reversed_tracks() {
    let (v, _) = clip(MotionClass::DiagonalDown, 1);
    assert!((motion_preservation(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    let r = motion_preservation(&v, &reverse_clip(&v)).unwrap();
    assert!((r + 1.0).abs() < 1e-2, "{r}");
    let line = CentroidTrack {
        points: (0..6).map(|i| [1.0 + 0.5 * i as f64, 2.0 + 0.25 * i as f64]).collect(),
        missing: vec![],
    };
    let back = CentroidTrack {
        points: line.points.iter().rev().copied().collect(),
        missing: vec![],
    };
    assert!((track_correlation(&line, &back) + 1.0).abs() < 1e-12);
}

#[test]
fn random_walks_are_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let walk = |rng: &mut ChaCha8Rng| {
        let mut p = [0.0, 0.0];
        let points = (0..200)
            .map(|_| {
                p[0] += rng.random::<f64>() - 0.5;
                p[1] += rng.random::<f64>() - 0.5;
                p
            })
            .collect();
        CentroidTrack {
            points,
            missing: vec![],
        }
    };
    let small = (0..100)
        .filter(|_| {
            let (a, b) = (walk(&mut rng), walk(&mut rng));
            track_correlation(&a, &b).abs() < 0.3
        })
        .count();
    assert!(small > 95, "{small}/100");
}

#[test]
fn static_track_is_undefined() {
    let still = CentroidTrack {
        points: vec![[3.0, 3.0]; 4],
        missing: vec![],
    };
    assert!(track_correlation(&still, &still).is_nan());
}

#[test]
fn appearance_does_not_change_motion_score() {
    for class in MotionClass::ALL {
        let (v, spec) = clip(*class, 3);
        let other = spec.with_context(Shape::Plus, IntensityBand::Dim, Texture::Stripes, BackgroundLevel::Pale);
        let (w, _) = generate_clip(&other, 8).unwrap();
        let m = motion_preservation(&v, &w).unwrap();
        assert!(m >= 0.99, "{class} {m} {spec:?}");
    }
}

#[test]
fn keyframe_subsampling() {
    assert_eq!(keyframe_indexes(8, 29).unwrap(), vec![0, 4, 8, 12, 16, 20, 24, 28]);
    assert_eq!(keyframe_indexes(8, 8).unwrap().len(), 8);
    assert!(keyframe_indexes(8, 30).is_err());
    let (v, spec) = clip(MotionClass::TranslateDown, 4);
    let times: Vec<f64> = (0..29).map(|i| i as f64 / 4.0).collect();
    let (long, _) = spec.render_at(&times).unwrap();
    assert!((motion_preservation(&v, &long).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn consistency_reference_cases() {
    let (v, _) = clip(MotionClass::Orbit, 5);
    let frame = v.frame(0).to_owned();
    let mut same = ndarray::Array2::zeros((3, 256));
    for n in 0..3 {
        same.row_mut(n).assign(&frame);
    }
    let same = VideoTensor::from_square(same).unwrap();
    assert!((frame_consistency(&same).unwrap().score - 1.0).abs() < 1e-12);

    let mean = frame.mean().unwrap();
    let mut pair = ndarray::Array2::zeros((2, 256));
    pair.row_mut(0).assign(&frame);
    pair.row_mut(1).assign(&frame.mapv(|x| 2.0 * mean - x));
    let pair = VideoTensor::from_square(pair).unwrap();
    assert!(frame_consistency(&pair).unwrap().score.abs() < 1e-12);

    let scaled = v.with_frames(v.frames() * 0.5).unwrap();
    let (a, b) = (frame_consistency(&v).unwrap().score, frame_consistency(&scaled).unwrap().score);
    assert!((a - b).abs() < 1e-12);

    let flat = VideoTensor::from_square(ndarray::Array2::from_elem((3, 256), 0.2)).unwrap();
    let c = frame_consistency(&flat).unwrap();
    assert_eq!(c.skipped_pairs, 3);
    assert!(c.score.is_nan());
}

fn pairs(entries: Vec<crate::corpus::CorpusEntry>) -> Vec<(VideoTensor, StructuredPrompt)> {
    entries.into_iter().map(|e| (e.video, e.prompt)).collect()
}

#[test]
fn classifier_meets_prerequisite_and_scores_prompts() {
    let train = pairs(build_training_corpus(512, 8, 40).unwrap());
    let mut valid = pairs(build_training_corpus(64, 8, 41).unwrap());
    for (i, class) in MotionClass::ALL.iter().enumerate() {
        let e = held_out_clip(*class, 8, i as u64).unwrap();
        valid.push((e.video, e.prompt));
    }
    let model = FactorClassifier::train(&train, &valid).unwrap();
    let acc = model.accuracy.unwrap();
    assert!(acc.min() >= 0.95, "{acc:?}");
    model.check_prerequisite().unwrap();

    for (v, p) in valid.iter().take(16) {
        let probs = model.predict(v);
        assert!(prompt_alignment(v, p, Some(&model)).unwrap() >= 0.9, "{p} {probs:?}");
        let mut wrong = p.clone();
        let shape = p.shape().unwrap();
        let band = p.intensity().unwrap();
        wrong.appearance = vec![
            crate::conditioning::AppearanceAttr::Shape(Shape::from_index((shape.index() + 3) % 8).unwrap()),
            crate::conditioning::AppearanceAttr::Intensity(IntensityBand::from_index((band.index() + 2) % 4).unwrap()),
        ];
        wrong.motion = MotionClass::from_index((p.motion.index() + 4) % 8).unwrap();
        assert!(prompt_alignment(v, &wrong, Some(&model)).unwrap() <= 0.5);
    }
    let back = FactorClassifier::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back, model);
}

#[test]
fn alignment_requires_a_vetted_classifier() {
    let (v, spec) = clip(MotionClass::Bounce, 6);
    assert!(matches!(
        prompt_alignment(&v, &spec.prompt(), None),
        Err(VmcError::MetricPrerequisite(_))
    ));
}

#[test]
fn markdown_and_csv_outputs() {
    let table = markdown_table(&[SummaryRow {
        method: "adapted".into(),
        alignment: 0.8,
        consistency: f64::NAN,
        motion: 0.95,
    }]);
    assert!(table.contains(MOTION_METRIC));
    assert!(table.contains("| adapted | 0.800 | n/a | 0.950 |"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_metric_csv(&path, &[MetricRow { clip_id: "a,b".into(), metric: MOTION_METRIC.into(), value: 0.5 }]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("clip_id,metric,value\n\"a,b\""));
}
