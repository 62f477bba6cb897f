use super::*;
use ndarray::Array2;

use crate::conditioning::{encode_prompt, MotionClass, StructuredPrompt};
use crate::corpus::{build_training_corpus, FRAME_SIDE};
use crate::denoiser::{DenoiserConfig, OUT_B, OUT_W};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noise(n: usize, seed: u64) -> VideoTensor {
    VideoTensor::standard_normal(n, 16, 16, &mut rng(seed))
}

fn cond() -> Conditioning {
    encode_prompt(&StructuredPrompt::new(MotionClass::Orbit))
}

fn zero_head(cfg: &DenoiserConfig) -> DenoiserParams {
    let mut p = DenoiserParams::init(cfg, 5).unwrap();
    p.tensors_mut()[OUT_W].fill(0.0);
    p.tensors_mut()[OUT_B].fill(0.0);
    p
}

#[test]
fn zero_predictor_loss_is_second_moment_of_noise() {
    let s = NoiseSchedule::toy();
    let p = zero_head(&DenoiserConfig::default());
    let v0 = noise(8, 1);
    let eps = noise(8, 2);
    let loss = epsilon_matching_loss(&p, &s, &v0, 40, &eps, &cond()).unwrap();
    let second = eps.frames().iter().map(|e| e * e).sum::<f64>() / eps.frames().len() as f64;
    assert!((loss - second).abs() < 1e-12);
    assert!((loss - 1.0).abs() < 0.1);
}

#[test]
fn loss_matches_naive_loop() {
    let s = NoiseSchedule::toy();
    let p = DenoiserParams::init(&DenoiserConfig::default(), 9).unwrap();
    let v0 = noise(4, 3);
    let eps = noise(4, 4);
    let t = 63;
    let loss = epsilon_matching_loss(&p, &s, &v0, t, &eps, &cond()).unwrap();
    let (a, b) = (s.alpha_bar(t).sqrt(), (1.0 - s.alpha_bar(t)).sqrt());
    let mut v_t = Array2::zeros((4, 256));
    for n in 0..4 {
        for i in 0..256 {
            v_t[[n, i]] = a * v0.frames()[[n, i]] + b * eps.frames()[[n, i]];
        }
    }
    let pred = p.predict_noise(&v0.with_frames(v_t).unwrap(), t, &cond()).unwrap();
    let mut sum = 0.0;
    for n in 0..4 {
        for i in 0..256 {
            let d = pred.frames()[[n, i]] - eps.frames()[[n, i]];
            sum += d * d;
        }
    }
    assert!((loss - sum / 1024.0).abs() < 1e-12);
    assert_eq!(squared_distance(eps.frames(), eps.frames()), 0.0);
}

#[test]
fn tweedie_inverts_forward_sample() {
    let s = NoiseSchedule::toy();
    let v0 = noise(3, 5);
    let eps = noise(3, 6);
    for t in [1, 17, 50, 100] {
        let v_t = v0.with_frames(s.forward_sample(v0.frames(), t, eps.frames()).unwrap()).unwrap();
        let back = tweedie_video(&v_t, &eps, t, &s).unwrap();
        assert!(back.mean_abs_error(&v0).unwrap() < 1e-12);
        let zero = tweedie_video(&v_t, &VideoTensor::zeros(3, 16, 16), t, &s).unwrap();
        let expect = v_t.frames() / s.alpha_bar(t).sqrt();
        assert!((zero.frames() - &expect).iter().all(|d| d.abs() < 1e-12));
    }
    assert!(tweedie_video(&v0, &noise(2, 1), 5, &s).is_err());
}

#[test]
fn tweedie_matches_naive_loop() {
    let s = NoiseSchedule::toy();
    let (v, e) = (noise(2, 7), noise(2, 8));
    let out = tweedie_video(&v, &e, 33, &s).unwrap();
    let ab = s.alpha_bar(33);
    for n in 0..2 {
        for i in 0..256 {
            let want = (v.frames()[[n, i]] - (1.0 - ab).sqrt() * e.frames()[[n, i]]) / ab.sqrt();
            assert!((out.frames()[[n, i]] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn ddpm_step_cases() {
    let s = NoiseSchedule::toy();
    let (v, e, z) = (noise(2, 9), noise(2, 10), noise(2, 11));
    let t = 40;
    let out = ddpm_step(&v, &e, t, &s, &z).unwrap();
    let (al, ab, bt) = (s.alpha(t), s.alpha_bar(t), s.beta_tilde(t));
    for n in 0..2 {
        for i in 0..256 {
            let mean = (v.frames()[[n, i]] - (1.0 - al) / (1.0 - ab).sqrt() * e.frames()[[n, i]]) / al.sqrt();
            assert!((out.frames()[[n, i]] - mean - bt * z.frames()[[n, i]]).abs() < 1e-12);
        }
    }
    let det_a = ddpm_step(&v, &e, t, &s, &VideoTensor::zeros(2, 16, 16)).unwrap();
    let det_b = ddpm_step(&v, &e, t, &s, &VideoTensor::zeros(2, 16, 16)).unwrap();
    assert_eq!(det_a, det_b);
    // Noise is ignored at the last step.
    let last = ddpm_step(&v, &e, 1, &s, &z).unwrap();
    let last0 = ddpm_step(&v, &e, 1, &s, &VideoTensor::zeros(2, 16, 16)).unwrap();
    assert_eq!(last, last0);
    // A vanishing beta makes the step the identity.
    let flat = NoiseSchedule::from_betas(vec![1e-14, 0.5]).unwrap();
    let same = ddpm_step(&v, &e, 1, &flat, &z).unwrap();
    assert!(same.mean_abs_error(&v).unwrap() < 1e-6);
    assert!(ddpm_step(&v, &e, 0, &s, &z).is_err());
}

#[test]
fn ddim_with_exact_noise_lands_on_forward_marginal() {
    let s = NoiseSchedule::toy();
    let (v0, eps) = (noise(2, 12), noise(2, 13));
    for (t, t_prev) in [(100, 98), (60, 20), (5, 0)] {
        let v_t = v0.with_frames(s.forward_sample(v0.frames(), t, eps.frames()).unwrap()).unwrap();
        let out = ddim_step(&v_t, &eps, t, t_prev, &s, 0.0, &noise(2, 99)).unwrap();
        let want = s.forward_sample(v0.frames(), t_prev, eps.frames());
        let want = match want {
            Ok(w) => w,
            Err(_) => v0.frames().clone(),
        };
        assert!((out.frames() - &want).iter().all(|d| d.abs() < 1e-10));
    }
}

#[test]
fn ddim_step_matches_naive_formula() {
    let s = NoiseSchedule::toy();
    let (v, e, z) = (noise(2, 14), noise(2, 15), noise(2, 16));
    let (t, tp, eta) = (70, 66, 0.7);
    let out = ddim_step(&v, &e, t, tp, &s, eta, &z).unwrap();
    let (ab, abp) = (s.alpha_bar(t), s.alpha_bar(tp));
    let bt = (1.0 - abp) / (1.0 - ab) * (1.0 - ab / abp);
    for n in 0..2 {
        for i in 0..256 {
            let (x, ep, zz) = (v.frames()[[n, i]], e.frames()[[n, i]], z.frames()[[n, i]]);
            let x0 = (x - (1.0 - ab).sqrt() * ep) / ab.sqrt();
            let want = abp.sqrt() * x0 + (1.0 - abp - eta * eta * bt * bt).sqrt() * ep + eta * bt * zz;
            assert!((out.frames()[[n, i]] - want).abs() < 1e-12);
        }
    }
    // Adjacent levels use the single-step posterior variance.
    assert!((strided_beta_tilde(&s, 40, 39) - s.beta_tilde(40)).abs() < 1e-15);
    assert!(ddim_step(&v, &e, 10, 10, &s, 0.0, &z).is_err());
    assert!(ddim_step(&v, &e, 10, 5, &s, 1.5, &z).is_err());
}

#[test]
fn larger_eta_spreads_samples_more() {
    let s = NoiseSchedule::toy();
    let model = |v: &VideoTensor, _t: usize, _c: &Conditioning| v.with_frames(v.frames() * 0.3);
    let mut spreads = Vec::new();
    for eta in [0.0, 0.5, 1.0] {
        let outs: Vec<VideoTensor> = (0..32)
            .map(|seed| {
                let cfg = SamplerConfig { eta, steps: 20, seed, clip_x0: false };
                let init = noise(2, 7);
                sample(&model, &cond(), &cfg, &s, (2, 16, 16), Some(&init)).unwrap()
            })
            .collect();
        let mean: Array2<f64> =
            outs.iter().fold(Array2::zeros((2, 256)), |acc, o| acc + o.frames()) / 32.0;
        let var: f64 = outs
            .iter()
            .map(|o| (o.frames() - &mean).mapv(|d| d * d).sum())
            .sum::<f64>()
            / 32.0;
        spreads.push(var);
    }
    assert!(spreads[0] < 1e-20);
    assert!(spreads[0] < spreads[1] && spreads[1] < spreads[2], "{spreads:?}");
}

#[test]
fn zero_predictor_inversion_is_a_rescaling() {
    let s = NoiseSchedule::toy();
    let zero = |v: &VideoTensor, _t: usize, _c: &Conditioning| Ok(VideoTensor::zeros(v.frame_count(), v.height(), v.width()));
    let v = noise(3, 17);
    let inv = ddim_invert(&v, &zero, &cond(), 50, &s).unwrap();
    assert_eq!(inv.deepest_t(), 100);
    assert_eq!(inv.trajectory.len(), 51);
    let expect = v.frames() * s.alpha_bar(100).sqrt();
    assert!((inv.latent().frames() - &expect).iter().all(|d| d.abs() < 1e-12));
}

/// Exact noise predictor for a data distribution concentrated on one video.
fn point_mass_predictor(
    target: VideoTensor,
    s: NoiseSchedule,
) -> impl Fn(&VideoTensor, usize, &Conditioning) -> Result<VideoTensor> {
    move |v: &VideoTensor, t: usize, _c: &Conditioning| {
        let ab = s.alpha_bar(t);
        v.with_frames((v.frames() - &(target.frames() * ab.sqrt())) / (1.0 - ab).sqrt())
    }
}

#[test]
fn inversion_round_trip_with_exact_predictor() {
    let s = NoiseSchedule::toy();
    let target = noise(4, 18);
    let model = point_mass_predictor(target.clone(), s.clone());
    let inv = ddim_invert(&target, &model, &cond(), 50, &s).unwrap();
    let cfg = SamplerConfig { eta: 0.0, steps: 50, seed: 0, clip_x0: false };
    let back = sample(&model, &cond(), &cfg, &s, (4, 16, 16), Some(inv.latent())).unwrap();
    assert!(back.mean_abs_error(&target).unwrap() < 1e-9);
    let again = ddim_invert(&target, &model, &cond(), 50, &s).unwrap();
    assert_eq!(again.latent(), inv.latent());
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let s = NoiseSchedule::toy();
    let p = DenoiserParams::init(&DenoiserConfig::default(), 3).unwrap();
    let cfg = SamplerConfig { eta: 0.5, steps: 10, seed: 21, clip_x0: false };
    let a = sample(&p, &cond(), &cfg, &s, (2, 16, 16), None).unwrap();
    let b = sample(&p, &cond(), &cfg, &s, (2, 16, 16), None).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.frame_count(), a.frame_dim()), (2, 256));
    let bad = SamplerConfig { eta: 0.0, steps: 101, seed: 0, clip_x0: false };
    assert!(sample(&p, &cond(), &bad, &s, (2, 16, 16), None).is_err());
}

fn tiny_corpus(count: usize) -> Vec<(VideoTensor, StructuredPrompt)> {
    build_training_corpus(count, 8, 11)
        .unwrap()
        .into_iter()
        .map(|e| (e.video, e.prompt))
        .collect()
}

#[test]
fn base_training_reduces_loss() {
    let s = NoiseSchedule::toy();
    let corpus = tiny_corpus(64);
    assert_eq!(corpus[0].0.height(), FRAME_SIDE);
    let cfg = TrainConfig::default();
    let report = train_base(&corpus, &cfg, &s, 1).unwrap();
    let (head, tail) = (report.trace.head_mean(100), report.trace.tail_mean(100));
    assert!(tail < 0.8 * head, "head {head} tail {tail}");
}

#[test]
fn base_training_is_deterministic_and_rejects_empty_corpus() {
    let s = NoiseSchedule::toy();
    let corpus = tiny_corpus(8);
    let cfg = TrainConfig {
        steps: 5,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let a = train_base(&corpus, &cfg, &s, 4).unwrap();
    let b = train_base(&corpus, &cfg, &s, 4).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params.content_hash(), b.params.content_hash());
    assert!(matches!(train_base(&[], &cfg, &s, 4), Err(VmcError::EmptyCorpus)));
}
