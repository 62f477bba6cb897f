//! Distils the motion of one held-out clip into the temporal attention of
//! the toy base model and checks that nothing else moved.
//!
//! `cargo run --release --example distill -- [loss] [target] [steps]`
//! with `loss` in `cos|l2` and `target` in `temporal|spatial`.

use std::path::Path;

use vmc::conditioning::{appearance_invariant, MotionClass};
use vmc::corpus::{held_out_clip, KEYFRAMES};
use vmc::experiment::{ToyModels, ToyRecipe};
use vmc::motion::{adapt_temporal_attention, AdaptConfig, AdaptTarget, DistillLoss};

fn main() -> vmc::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let loss = DistillLoss::parse(&args.next().unwrap_or_else(|| "cos".into()))?;
    let target = AdaptTarget::parse(&args.next().unwrap_or_else(|| "temporal".into()))?;
    let steps: usize = args.next().map_or(400, |s| s.parse().expect("steps"));

    let models = ToyModels::load_or_train(Path::new("target/toy-models"), &ToyRecipe::default(), &mut |m| {
        eprintln!("{m}")
    })?;
    let clip = held_out_clip(MotionClass::Orbit, KEYFRAMES, 0)?;
    let prompt = appearance_invariant(&clip.prompt);
    let cfg = AdaptConfig {
        steps,
        loss,
        target,
        ..AdaptConfig::default()
    };
    let report = adapt_temporal_attention(&models.base, &clip.video, &prompt, &cfg, models.schedule(), 0)?;
    println!("clip {} under `{prompt}`", clip.id);
    println!(
        "{} on {}: loss {:.4} (first 50) -> {:.4} (last 50)",
        loss.name(),
        target.name(),
        report.trace.head_mean(50),
        report.trace.tail_mean(50)
    );

    let base = &models.base;
    let moved: Vec<&str> = base
        .specs()
        .iter()
        .zip(base.tensors().iter().zip(report.params.tensors()))
        .filter(|(_, (a, b))| a != b)
        .map(|(spec, _)| spec.name.as_str())
        .collect();
    println!("{} of {} tensors changed: {}", moved.len(), base.specs().len(), moved.join(", "));
    Ok(())
}
