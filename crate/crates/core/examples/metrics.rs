//! The three evaluation metrics on corpus clips: trajectory correlation,
//! raw-cosine frame consistency and factor-classifier alignment.
//!
//! `cargo run --release --example metrics`

use vmc::conditioning::MotionClass;
use vmc::corpus::{build_training_corpus, held_out_clip, reverse_clip, KEYFRAMES};
use vmc::metrics::{frame_consistency, markdown_table, motion_preservation, FactorClassifier, SummaryRow};

fn main() -> vmc::error::Result<()> {
    let pairs = |n, seed| -> vmc::error::Result<Vec<_>> {
        Ok(build_training_corpus(n, KEYFRAMES, seed)?
            .into_iter()
            .map(|e| (e.video, e.prompt))
            .collect())
    };
    let classifier = FactorClassifier::train(&pairs(512, 1)?, &pairs(128, 2)?)?;
    let acc = classifier.accuracy.expect("validated classifier");
    println!(
        "classifier held-out accuracy: motion {:.3}  shape {:.3}  intensity {:.3}",
        acc.motion, acc.shape, acc.intensity
    );

    let mut rows = Vec::new();
    for class in [MotionClass::TranslateRight, MotionClass::Bounce, MotionClass::Orbit] {
        let clip = held_out_clip(class, KEYFRAMES, 0)?;
        let reversed = reverse_clip(&clip.video);
        let mut wrong = clip.prompt.clone();
        wrong.motion = MotionClass::ALL[(class.index() + 4) % MotionClass::ALL.len()];
        let probs = classifier.predict(&clip.video);
        println!(
            "{:<18} self {:+.3}  reversed {:+.3}  alignment own {:.3} other-motion {:.3}",
            clip.id,
            motion_preservation(&clip.video, &clip.video)?,
            motion_preservation(&clip.video, &reversed)?,
            probs.alignment(&clip.prompt),
            probs.alignment(&wrong)
        );
        rows.push(SummaryRow {
            method: clip.id.clone(),
            alignment: probs.alignment(&clip.prompt),
            consistency: frame_consistency(&clip.video)?.score,
            motion: motion_preservation(&clip.video, &clip.video)?,
        });
    }
    print!("\n{}", markdown_table(&rows));
    Ok(())
}
