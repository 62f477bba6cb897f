//! Backward motion: distil a time-reversed clip and compare the generated
//! track with the reversed and the original motion.
//!
//! `cargo run --release --example backward`

use std::path::Path;

use vmc::conditioning::MotionClass;
use vmc::experiment::{backward_motion, GridConfig, ToyModels, ToyRecipe, GRID_SEEDS};

fn main() -> vmc::error::Result<()> {
    let models = ToyModels::load_or_train(Path::new("target/toy-models"), &ToyRecipe::default(), &mut |m| {
        eprintln!("{m}")
    })?;
    let cfg = GridConfig::default();
    for seed in GRID_SEEDS {
        let r = backward_motion(&models, MotionClass::TranslateRight, MotionClass::TranslateLeft, seed, &cfg)?;
        println!(
            "seed {seed}: versus reversed {:+.3}  versus forward {:+.3}  alignment {:.3}",
            r.versus_reversed, r.versus_forward, r.alignment
        );
    }
    Ok(())
}
