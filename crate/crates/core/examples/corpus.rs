//! Renders one held-out clip per motion class, recovers each motion class
//! from the centroid track and writes the clips as a PGM contact sheet.
//!
//! `cargo run --release --example corpus -- [out_dir]`

use std::path::PathBuf;

use vmc::conditioning::MotionClass;
use vmc::corpus::{build_training_corpus, classify_track, extract_centroid_track, held_out_clip, KEYFRAMES};
use vmc::netpbm::write_pgm;

fn main() -> vmc::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-corpus".into()));
    std::fs::create_dir_all(&out)?;

    let train = build_training_corpus(64, KEYFRAMES, 7)?;
    let recovered = train
        .iter()
        .filter(|e| classify_track(&extract_centroid_track(&e.video)) == e.prompt.motion)
        .count();
    println!("training clips: {} ({recovered} with recoverable motion class)", train.len());

    for class in MotionClass::ALL {
        let clip = held_out_clip(*class, KEYFRAMES, 0)?;
        let track = extract_centroid_track(&clip.video);
        let first = track.points[0];
        let last = track.points[track.len() - 1];
        println!(
            "{:<16} {}  centroid ({:.1},{:.1}) -> ({:.1},{:.1})  classified {}",
            clip.id,
            clip.prompt,
            first[0],
            first[1],
            last[0],
            last[1],
            classify_track(&track)
        );
        write_pgm(&out.join(format!("{}.pgm", clip.id)), &clip.video, KEYFRAMES)?;
    }
    println!("grids written to {}", out.display());
    Ok(())
}
