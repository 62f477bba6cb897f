//! Trains the keyframe denoiser on a small synthetic corpus and saves a
//! checkpoint plus its loss curve.
//!
//! `cargo run --release --example train_base -- [steps] [out_stem]`

use std::path::PathBuf;

use vmc::corpus::{build_training_corpus, KEYFRAMES};
use vmc::denoiser::{load_checkpoint, save_checkpoint};
use vmc::diffusion::{train_base, TrainConfig};
use vmc::schedule::NoiseSchedule;

fn main() -> vmc::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(400, |s| s.parse().expect("steps"));
    let stem = PathBuf::from(args.next().unwrap_or_else(|| "target/example-base/base".into()));

    let corpus: Vec<_> = build_training_corpus(128, KEYFRAMES, 1)?
        .into_iter()
        .map(|e| (e.video, e.prompt))
        .collect();
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::toy_recipe()
    };
    let schedule = NoiseSchedule::toy();
    let mut report = train_base(&corpus, &cfg, &schedule, 1)?;
    report.params.round_to_f32();
    let window = (steps / 4).max(1);
    println!(
        "{steps} steps: mean loss {:.4} (first {window}) -> {:.4} (last {window})",
        report.trace.head_mean(window),
        report.trace.tail_mean(window)
    );

    if let Some(dir) = stem.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let manifest = save_checkpoint(&report.params, &stem, None)?;
    report.trace.write_csv(&stem.with_extension("loss.csv"))?;
    let (reloaded, _) = load_checkpoint(&stem)?;
    println!(
        "checkpoint {} ({} tensors, sha256 {}), reload matches: {}",
        stem.display(),
        manifest.tensors.len(),
        &manifest.content_hash[..16],
        reloaded.content_hash() == report.params.content_hash()
    );
    Ok(())
}
