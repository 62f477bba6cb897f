//! DDIM inversion followed by deterministic sampling from the inverted
//! latent, on clips the toy base model never saw.
//!
//! `cargo run --release --example inversion -- [steps]`

use std::path::Path;

use vmc::conditioning::{appearance_invariant, encode_prompt, MotionClass};
use vmc::corpus::{held_out_clip, KEYFRAMES};
use vmc::diffusion::{ddim_invert, sample, SamplerConfig};
use vmc::experiment::{ToyModels, ToyRecipe};

fn main() -> vmc::error::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(50, |s| s.parse().expect("steps"));
    let models = ToyModels::load_or_train(Path::new("target/toy-models"), &ToyRecipe::default(), &mut |m| {
        eprintln!("{m}")
    })?;
    let sampler = SamplerConfig {
        steps,
        ..SamplerConfig::default()
    };
    for class in MotionClass::ALL {
        let clip = held_out_clip(*class, KEYFRAMES, 0)?;
        let c = encode_prompt(&appearance_invariant(&clip.prompt));
        let inv = ddim_invert(&clip.video.to_signal(), &models.base, &c, steps, models.schedule())?;
        let shape = (KEYFRAMES, clip.video.height(), clip.video.width());
        let back = sample(&models.base, &c, &sampler, models.schedule(), shape, Some(inv.latent()))?;
        let mae = back.from_signal().mean_abs_error(&clip.video)?;
        println!("{:<16} inverted to t={}  reconstruction MAE {mae:.4}", clip.id, inv.deepest_t());
    }
    Ok(())
}
