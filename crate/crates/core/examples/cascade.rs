//! The three-stage cascade on a held-out clip: keyframes from the inverted
//! latent, frozen interpolation to 29 frames and frozen 2x upscaling.
//!
//! `cargo run --release --example cascade -- [out_dir]`

use std::path::{Path, PathBuf};

use vmc::cascade::{downsample, keyframe_slots, vmc_pipeline, write_run_dir, PipelineConfig, RunManifest};
use vmc::conditioning::MotionClass;
use vmc::corpus::{extract_centroid_track, held_out_clip, KEYFRAMES};
use vmc::diffusion::SamplerConfig;
use vmc::experiment::{target_prompt, ToyModels, ToyRecipe};
use vmc::netpbm::write_pgm;

fn main() -> vmc::error::Result<()> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-cascade".into()));
    let models = ToyModels::load_or_train(Path::new("target/toy-models"), &ToyRecipe::default(), &mut |m| {
        eprintln!("{m}")
    })?;
    let clip = held_out_clip(MotionClass::TranslateRight, KEYFRAMES, 1)?;
    let target = target_prompt(clip.prompt.motion, &clip.spec);
    let bundle = models.bundle(models.base.clone());
    let cfg = PipelineConfig {
        sampler: SamplerConfig {
            clip_x0: true,
            ..SamplerConfig::default()
        },
        ..PipelineConfig::default()
    };
    let out = vmc_pipeline(&clip.video, &clip.prompt, &target, &bundle, &cfg)?;
    println!("{} `{}` -> `{target}`", clip.id, clip.prompt);
    println!(
        "keyframes {}  interpolated {}  final {}",
        out.keyframes.shape_string(),
        out.interpolated.shape_string(),
        out.output.shape_string()
    );

    let low = downsample(&out.output)?;
    let slots = keyframe_slots(KEYFRAMES);
    let exact = slots
        .iter()
        .enumerate()
        .all(|(k, &s)| out.interpolated.frame(s) == out.keyframes.frame(k));
    println!("keyframes at slots {slots:?}, copied exactly: {exact}");
    println!("upscaled then pooled equals interpolated: MAE {:.2e}", low.mean_abs_error(&out.interpolated)?);
    let track = extract_centroid_track(&out.interpolated);
    let xs: Vec<String> = track.points.iter().map(|p| format!("{:.1}", p[1])).collect();
    println!("centroid column per frame: {}", xs.join(" "));
    println!(
        "stage seconds: keyframes {:.2}  interpolate {:.2}  upscale {:.2}",
        out.timings.keyframes_s, out.timings.interpolate_s, out.timings.upscale_s
    );

    let manifest = RunManifest {
        source_prompt: clip.prompt.clone(),
        target_prompt: target,
        config: cfg,
        keyframe_params_hash: bundle.keyframe_params.content_hash(),
        frozen: bundle.recorded_hashes(),
        source_hash: clip.video.content_hash(),
        output_hash: out.output.content_hash(),
        timings: out.timings.clone(),
        extra: None,
    };
    write_run_dir(&out_dir, &clip.video, &out, &manifest)?;
    write_pgm(&out_dir.join("final.pgm"), &out.output, 8)?;
    println!("run directory written to {}", out_dir.display());
    Ok(())
}
