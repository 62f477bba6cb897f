use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::conditioning::{MotionClass, Shape, BackgroundLevel, IntensityBand, Texture};
use crate::corpus::{held_out_clip, read_clip, KEYFRAMES};
use crate::denoiser::{DenoiserConfig, GradRequest, Objective};

fn untrained_interp() -> Interpolator {
    Interpolator {
        params: DenoiserParams::init(&DenoiserConfig::default(), 5).unwrap(),
        schedule: NoiseSchedule::toy(),
        sampler_steps: 10,
    }
}

fn random_video(n: usize, side: usize, seed: u64) -> VideoTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Array2::from_shape_fn((n, side * side), |_| rng.random::<f64>());
    VideoTensor::new(f, side, side).unwrap()
}

fn bundle() -> CascadeBundle {
    CascadeBundle::new(
        DenoiserParams::init(&DenoiserConfig::default(), 1).unwrap(),
        NoiseSchedule::toy(),
        untrained_interp(),
        Upscaler::init(16, 8, 2),
    )
}

#[test]
fn eight_keyframes_expand_to_twenty_nine_frames() {
    assert_eq!(interpolated_len(8), 29);
    assert_eq!(keyframe_slots(8), vec![0, 4, 8, 12, 16, 20, 24, 28]);
    let one_based: Vec<usize> = keyframe_slots(8).iter().map(|i| i + 1).collect();
    assert_eq!(one_based, vec![1, 5, 9, 13, 17, 21, 25, 29]);
}

#[test]
fn interpolation_copies_keyframes_exactly() {
    let keys = random_video(KEYFRAMES, 16, 3);
    let out = interpolate_frames(&keys, &untrained_interp(), 0).unwrap();
    assert_eq!(out.frame_count(), 29);
    for (k, slot) in keyframe_slots(8).into_iter().enumerate() {
        assert_eq!(out.frame(slot), keys.frame(k));
    }
    assert!(out.frames().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn interpolation_rejects_wrong_keyframe_count() {
    let model = untrained_interp();
    for n in [2, 7, 9] {
        let err = interpolate_frames(&random_video(n, 16, 0), &model, 0).unwrap_err();
        assert!(matches!(err, VmcError::ShapeMismatch { .. }));
    }
    let err = interpolate_frames(&random_video(8, 8, 0), &model, 0).unwrap_err();
    assert!(matches!(err, VmcError::ShapeMismatch { .. }));
}

#[test]
fn interpolation_is_deterministic_per_seed() {
    let keys = random_video(KEYFRAMES, 16, 4);
    let model = untrained_interp();
    let a = interpolate_frames(&keys, &model, 9).unwrap();
    let b = interpolate_frames(&keys, &model, 9).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn window_encoding_round_trips(seed in any::<u64>()) {
        let w = random_video(WINDOW, 16, seed);
        let back = decode_window(&encode_window(&w).unwrap()).unwrap();
        prop_assert!(back.mean_abs_error(&w).unwrap() < 1e-12);
    }

    #[test]
    fn upscaling_then_pooling_is_identity(seed in any::<u64>(), hidden in 1usize..12) {
        let v = random_video(3, 16, seed);
        let up = Upscaler::init(16, hidden, seed ^ 1);
        let out = super_resolve(&v, &up).unwrap();
        prop_assert_eq!((out.height(), out.width()), (32, 32));
        let back = downsample(&out).unwrap();
        prop_assert!(back.mean_abs_error(&v).unwrap() < 1e-12);
    }

    #[test]
    fn constant_frames_stay_constant(level in 0.0f64..1.0, seed in any::<u64>()) {
        let v = VideoTensor::new(Array2::from_elem((2, 256), level), 16, 16).unwrap();
        let out = super_resolve(&v, &Upscaler::init(16, 8, seed)).unwrap();
        prop_assert!(out.frames().iter().all(|x| (x - level).abs() < 1e-12));
    }
}

#[test]
fn linear_ramp_window_has_zero_residual() {
    let left = random_video(1, 16, 1);
    let right = random_video(1, 16, 2);
    let frames = Array2::from_shape_fn((WINDOW, 256), |(j, p)| {
        let w = j as f64 / 4.0;
        (1.0 - w) * left.frame(0)[p] + w * right.frame(0)[p]
    });
    let enc = encode_window(&VideoTensor::new(frames, 16, 16).unwrap()).unwrap();
    for j in 1..WINDOW - 1 {
        assert!(enc.frame(j).iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn window_loss_ignores_keyframe_noise() {
    let s = NoiseSchedule::toy();
    let params = DenoiserParams::init(&DenoiserConfig::default(), 0).unwrap();
    let w = encode_window(&random_video(WINDOW, 16, 6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = VideoTensor::standard_normal(WINDOW, 16, 16, &mut rng);
    let mut eps2 = eps.clone();
    eps2.frames_mut().row_mut(0).fill(5.0);
    eps2.frames_mut().row_mut(WINDOW - 1).fill(-5.0);
    let a = WindowMatching::new(&s, &w, 30, &eps).unwrap().value(&params).unwrap();
    let b = WindowMatching::new(&s, &w, 30, &eps2).unwrap().value(&params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn window_loss_gradient_matches_finite_differences() {
    let s = NoiseSchedule::toy();
    let params = DenoiserParams::init(&DenoiserConfig::default(), 0).unwrap();
    let w = encode_window(&random_video(WINDOW, 16, 7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = VideoTensor::standard_normal(WINDOW, 16, 16, &mut rng);
    let obj = WindowMatching::new(&s, &w, 40, &eps).unwrap();
    let request = GradRequest::all(&params);
    let (_, grads) = obj.value_and_gradient(&params, &request).unwrap();
    let h = 1e-5;
    for _ in 0..20 {
        let i = rng.random_range(0..params.len());
        let (r, c) = params.tensor(i).dim();
        let (r, c) = (rng.random_range(0..r), rng.random_range(0..c));
        let mut plus = params.clone();
        plus.tensors_mut()[i][[r, c]] += h;
        let mut minus = params.clone();
        minus.tensors_mut()[i][[r, c]] -= h;
        let fd = (obj.value(&plus).unwrap() - obj.value(&minus).unwrap()) / (2.0 * h);
        let an = grads.get(i).unwrap()[[r, c]];
        assert!((fd - an).abs() <= 1e-6 + 1e-4 * an.abs().max(fd.abs()), "{i} {r} {c}: {fd} vs {an}");
    }
}

#[test]
fn super_resolve_rejects_wrong_resolution() {
    let up = Upscaler::init(16, 4, 0);
    let err = super_resolve(&random_video(2, 8, 0), &up).unwrap_err();
    assert!(matches!(err, VmcError::ShapeMismatch { .. }));
}

#[test]
fn short_upscaler_fit_reduces_loss() {
    let cfg = UpscalerConfig {
        steps: 150,
        clips: 8,
        batch: 512,
        ..UpscalerConfig::default()
    };
    let (up, losses) = train_upscaler(&cfg, 0).unwrap();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "{head} -> {tail}");
    let round = Upscaler::from_json(&up.to_json().unwrap()).unwrap();
    assert_eq!(round.content_hash(), up.content_hash());
}

#[test]
fn pipeline_output_has_cascade_shape_and_exact_keyframe_slots() {
    let b = bundle();
    let clip = held_out_clip(MotionClass::TranslateRight, 8, 0).unwrap();
    let cfg = PipelineConfig {
        inversion_steps: 10,
        inversion_prompt: InversionPrompt::AppearanceInvariant,
        sampler: SamplerConfig {
            steps: 10,
            ..SamplerConfig::default()
        },
        interp_seed: 3,
    };
    let out = vmc_pipeline(&clip.video, &clip.prompt, &clip.prompt, &b, &cfg).unwrap();
    assert_eq!(out.keyframes.frame_count(), 8);
    assert_eq!(out.interpolated.frame_count(), 29);
    assert_eq!(
        (out.output.frame_count(), out.output.height(), out.output.width()),
        (29, 32, 32)
    );
    assert_eq!(out.output.frame_dim(), 4 * clip.video.frame_dim());
    let pooled = downsample(&out.output).unwrap();
    for (k, slot) in keyframe_slots(8).into_iter().enumerate() {
        let diff = &pooled.frame(slot) - &out.keyframes.frame(k);
        assert!(diff.iter().all(|d| d.abs() < 1e-12));
    }
    let again = vmc_pipeline(&clip.video, &clip.prompt, &clip.prompt, &b, &cfg).unwrap();
    assert_eq!(again.output, out.output);
}

#[test]
fn tampered_frozen_stage_is_a_hard_error() {
    let mut b = bundle();
    b.verify_frozen().unwrap();
    let adapted = b.with_keyframe_params(DenoiserParams::init(&DenoiserConfig::default(), 9).unwrap());
    adapted.verify_frozen().unwrap();
    assert_eq!(adapted.recorded_hashes(), b.recorded_hashes());
    b.interp.params.tensors_mut()[0][[0, 0]] += 1e-9;
    assert!(matches!(b.verify_frozen(), Err(VmcError::HashMismatch { .. })));
    let clip = held_out_clip(MotionClass::Bounce, 8, 0).unwrap();
    let err = vmc_pipeline(&clip.video, &clip.prompt, &clip.prompt, &b, &PipelineConfig::default());
    assert!(matches!(err, Err(VmcError::HashMismatch { .. })));
    let mut c = bundle();
    c.sr.weights[1][[0, 0]] *= 2.0;
    assert!(matches!(c.verify_frozen(), Err(VmcError::HashMismatch { .. })));
}

#[test]
fn run_directory_holds_every_stage() {
    let b = bundle();
    let clip = held_out_clip(MotionClass::Orbit, 8, 1).unwrap();
    let target = StructuredPrompt::full(
        MotionClass::Orbit,
        Shape::Disk,
        IntensityBand::Vivid,
        Texture::Flat,
        BackgroundLevel::Black,
    );
    let cfg = PipelineConfig {
        inversion_steps: 5,
        inversion_prompt: InversionPrompt::Source,
        sampler: SamplerConfig {
            steps: 5,
            ..SamplerConfig::default()
        },
        interp_seed: 0,
    };
    let out = vmc_pipeline(&clip.video, &clip.prompt, &target, &b, &cfg).unwrap();
    let manifest = RunManifest {
        source_prompt: clip.prompt.clone(),
        target_prompt: target.clone(),
        config: cfg,
        keyframe_params_hash: b.keyframe_params.content_hash(),
        frozen: b.recorded_hashes(),
        source_hash: clip.video.content_hash(),
        output_hash: out.output.content_hash(),
        timings: out.timings.clone(),
        extra: None,
    };
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &clip.video, &out, &manifest).unwrap();
    let (latent, header) = read_clip(&dir.path().join("latent.clip")).unwrap();
    assert!(header.prompt.is_none());
    assert!(latent.mean_abs_error(&out.latent).unwrap() < 1e-6);
    let (fin, header) = read_clip(&dir.path().join("final.clip")).unwrap();
    assert_eq!(header.prompt, Some(target));
    assert_eq!((fin.frame_count(), fin.height()), (29, 32));
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let back: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, manifest);
}
