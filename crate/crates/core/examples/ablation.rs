//! The adaptation ablation: {cos, l2} x {temporal attention, spatial +
//! conditioning} plus the frozen inversion-only arm, over four motion
//! classes and three seeds.
//!
//! `cargo run --release --example ablation -- [seeds]`

use std::path::Path;

use vmc::experiment::{ablation_arms, run_arm, summarize, GridConfig, ToyModels, ToyRecipe, GRID_SEEDS};
use vmc::metrics::{markdown_table, SummaryRow};

fn main() -> vmc::error::Result<()> {
    let seeds: Vec<u64> = match std::env::args().nth(1) {
        Some(n) => (0..n.parse().expect("seed count")).collect(),
        None => GRID_SEEDS.to_vec(),
    };
    let models = ToyModels::load_or_train(Path::new("target/toy-models"), &ToyRecipe::default(), &mut |m| {
        eprintln!("{m}")
    })?;
    let cfg = GridConfig::default();
    let mut rows = Vec::new();
    for arm in ablation_arms() {
        let cells = run_arm(&models, arm, &cfg, &seeds)?;
        for c in &cells {
            println!(
                "{:<22} {:<18} motion {:+.3}  alignment {:.3}",
                arm.name(),
                c.clip_id,
                c.motion,
                c.alignment
            );
        }
        let s = summarize(arm, &cells);
        rows.push(SummaryRow {
            method: arm.name(),
            alignment: s.alignment,
            consistency: s.consistency,
            motion: s.motion,
        });
    }
    print!("\n{}", markdown_table(&rows));
    Ok(())
}
