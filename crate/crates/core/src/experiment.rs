//! Reproducible toy experiments: a cached set of trained models and the
//! customization grid used by the ablations.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{
    customize_keyframes, train_interpolator, train_upscaler, CascadeBundle, InterpTrainConfig,
    Interpolator, PipelineConfig, Upscaler, UpscalerConfig,
};
use crate::conditioning::{
    appearance_invariant, BackgroundLevel, IntensityBand, MotionClass, Shape, StructuredPrompt,
    Texture,
};
use crate::corpus::{build_training_corpus, held_out_clip, held_out_shape, reverse_clip, ClipSpec, KEYFRAMES};
use crate::denoiser::{load_checkpoint, save_checkpoint, DenoiserParams};
use crate::diffusion::{train_base, SamplerConfig, TrainConfig};
use crate::error::Result;
use crate::metrics::{frame_consistency, motion_preservation, FactorClassifier};
use crate::motion::{adapt_temporal_attention, AdaptConfig, AdaptTarget, DistillLoss};
use crate::schedule::NoiseSchedule;
use crate::video::VideoTensor;

/// Everything needed to rebuild the toy model set from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRecipe {
    pub schedule: NoiseSchedule,
    pub base: TrainConfig,
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub base_seed: u64,
    pub interp: InterpTrainConfig,
    pub interp_seed: u64,
    pub interp_sampler_steps: usize,
    pub sr: UpscalerConfig,
    pub sr_seed: u64,
    pub validation_size: usize,
    pub validation_seed: u64,
}

impl Default for ToyRecipe {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::toy(),
            base: TrainConfig::toy_recipe(),
            corpus_size: 512,
            corpus_seed: 1,
            base_seed: 1,
            interp: InterpTrainConfig::default(),
            interp_seed: 4,
            interp_sampler_steps: 25,
            sr: UpscalerConfig::default(),
            sr_seed: 3,
            validation_size: 128,
            validation_seed: 2,
        }
    }
}

/// Trained base, interpolation and upscaling stages plus the evaluation
/// classifier.
#[derive(Debug, Clone)]
pub struct ToyModels {
    pub recipe: ToyRecipe,
    pub base: DenoiserParams,
    pub interp: Interpolator,
    pub sr: Upscaler,
    pub classifier: FactorClassifier,
}

fn corpus_pairs(count: usize, seed: u64) -> Result<Vec<(VideoTensor, StructuredPrompt)>> {
    Ok(build_training_corpus(count, KEYFRAMES, seed)?
        .into_iter()
        .map(|e| (e.video, e.prompt))
        .collect())
}

impl ToyModels {
    /// Loads the models cached in `dir` when they were built from `recipe`,
    /// otherwise trains them and writes the cache.
    pub fn load_or_train(dir: &Path, recipe: &ToyRecipe, log: &mut dyn FnMut(&str)) -> Result<Self> {
        let recipe_path = dir.join("recipe.json");
        let cached = fs::read_to_string(&recipe_path)
            .ok()
            .and_then(|t| serde_json::from_str::<ToyRecipe>(&t).ok());
        if cached.as_ref() == Some(recipe) {
            if let Ok(models) = Self::load(dir, recipe) {
                log(&format!("loaded toy models from {}", dir.display()));
                return Ok(models);
            }
        }
        let models = Self::train(recipe, log)?;
        models.save(dir)?;
        Ok(models)
    }

    pub fn train(recipe: &ToyRecipe, log: &mut dyn FnMut(&str)) -> Result<Self> {
        let corpus = corpus_pairs(recipe.corpus_size, recipe.corpus_seed)?;
        log(&format!("training base model for {} steps", recipe.base.steps));
        let base = train_base(&corpus, &recipe.base, &recipe.schedule, recipe.base_seed)?;
        let mut base_params = base.params;
        base_params.round_to_f32();
        log(&format!(
            "base loss {:.4} -> {:.4}",
            base.trace.head_mean(100),
            base.trace.tail_mean(100)
        ));
        log(&format!("training interpolator for {} steps", recipe.interp.train.steps));
        let interp = train_interpolator(&recipe.interp, &recipe.schedule, recipe.interp_seed)?;
        log(&format!(
            "interpolator loss {:.4} -> {:.4}",
            interp.trace.head_mean(50),
            interp.trace.tail_mean(50)
        ));
        log("training upscaler");
        let (sr, _) = train_upscaler(&recipe.sr, recipe.sr_seed)?;
        log("training factor classifier");
        let validation = corpus_pairs(recipe.validation_size, recipe.validation_seed)?;
        let classifier = FactorClassifier::train(&corpus, &validation)?;
        Ok(Self {
            recipe: recipe.clone(),
            base: base_params,
            interp: Interpolator {
                params: interp.params,
                schedule: recipe.schedule.clone(),
                sampler_steps: recipe.interp_sampler_steps,
            },
            sr,
            classifier,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let schedule = serde_json::to_value(&self.recipe.schedule)?;
        save_checkpoint(&self.base, &dir.join("base"), Some(serde_json::json!({ "schedule": schedule })))?;
        save_checkpoint(
            &self.interp.params,
            &dir.join("interp"),
            Some(serde_json::json!({ "schedule": schedule, "sampler_steps": self.interp.sampler_steps })),
        )?;
        fs::write(dir.join("sr.json"), self.sr.to_json()?)?;
        fs::write(dir.join("classifier.json"), self.classifier.to_json()?)?;
        fs::write(dir.join("recipe.json"), serde_json::to_string_pretty(&self.recipe)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, recipe: &ToyRecipe) -> Result<Self> {
        let (base, _) = load_checkpoint(&dir.join("base"))?;
        let (interp, _) = load_checkpoint(&dir.join("interp"))?;
        let sr = Upscaler::from_json(&fs::read_to_string(dir.join("sr.json"))?)?;
        let classifier = FactorClassifier::from_json(&fs::read_to_string(dir.join("classifier.json"))?)?;
        Ok(Self {
            recipe: recipe.clone(),
            base,
            interp: Interpolator {
                params: interp,
                schedule: recipe.schedule.clone(),
                sampler_steps: recipe.interp_sampler_steps,
            },
            sr,
            classifier,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.recipe.schedule
    }

    /// Cascade around the given keyframe weights.
    pub fn bundle(&self, keyframe_params: DenoiserParams) -> CascadeBundle {
        CascadeBundle::new(
            keyframe_params,
            self.recipe.schedule.clone(),
            self.interp.clone(),
            self.sr.clone(),
        )
    }
}

/// Motion classes of the customization grid.
pub const GRID_CLASSES: [MotionClass; 4] = [
    MotionClass::TranslateRight,
    MotionClass::DiagonalUp,
    MotionClass::Bounce,
    MotionClass::Orbit,
];
pub const GRID_SEEDS: [u64; 3] = [0, 1, 2];

/// A new appearance and background for a source clip: every appearance and
/// background attribute differs from the source.
pub fn target_prompt(motion: MotionClass, source: &ClipSpec) -> StructuredPrompt {
    let shift = |i: usize, by: usize, n: usize| (i + by) % n;
    let mut shape = Shape::from_index(shift(held_out_shape(source.motion.class).index(), 2, 8)).expect("shape");
    if shape == source.shape {
        shape = Shape::from_index(shift(shape.index(), 1, 8)).expect("shape");
    }
    StructuredPrompt::full(
        motion,
        shape,
        IntensityBand::from_index(shift(source.intensity.index(), 2, 4)).expect("band"),
        Texture::from_index(shift(source.texture.index(), 1, 4)).expect("texture"),
        BackgroundLevel::from_index(shift(source.level.index(), 2, 4)).expect("level"),
    )
}

/// One arm of the ablation: which loss and tensors are adapted, or no
/// adaptation at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub loss: DistillLoss,
    pub target: AdaptTarget,
    pub adapted: bool,
}

impl Arm {
    pub fn adapted(loss: DistillLoss, target: AdaptTarget) -> Self {
        Self {
            loss,
            target,
            adapted: true,
        }
    }

    pub fn frozen() -> Self {
        Self {
            loss: DistillLoss::Cos,
            target: AdaptTarget::TemporalAttention,
            adapted: false,
        }
    }

    pub fn name(&self) -> String {
        if self.adapted {
            format!("{}+{}", self.loss.name(), self.target.name())
        } else {
            "frozen".into()
        }
    }
}

/// Settings shared by every grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub adapt: AdaptConfig,
    pub pipeline: PipelineConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            adapt: AdaptConfig::default(),
            pipeline: PipelineConfig {
                sampler: SamplerConfig {
                    clip_x0: true,
                    ..SamplerConfig::default()
                },
                ..PipelineConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub clip_id: String,
    pub arm: Arm,
    pub class: MotionClass,
    pub seed: u64,
    pub target: StructuredPrompt,
    pub motion: f64,
    pub alignment: f64,
    pub consistency: f64,
    /// Adaptation loss over the first and last 50 iterations.
    pub loss_head: Option<f64>,
    pub loss_tail: Option<f64>,
}

/// Keyframes for `source` under `target` after the arm's adaptation.
pub fn customize(
    models: &ToyModels,
    source: &VideoTensor,
    source_prompt: &StructuredPrompt,
    target: &StructuredPrompt,
    arm: Arm,
    cfg: &GridConfig,
    seed: u64,
) -> Result<(VideoTensor, Option<(f64, f64)>)> {
    let (params, losses) = if arm.adapted {
        let adapt = AdaptConfig {
            loss: arm.loss,
            target: arm.target,
            ..cfg.adapt.clone()
        };
        let report = adapt_temporal_attention(
            &models.base,
            source,
            &appearance_invariant(source_prompt),
            &adapt,
            models.schedule(),
            seed,
        )?;
        let losses = (report.trace.head_mean(50), report.trace.tail_mean(50));
        (report.params, Some(losses))
    } else {
        (models.base.clone(), None)
    };
    let pipeline = PipelineConfig {
        sampler: SamplerConfig {
            seed,
            ..cfg.pipeline.sampler
        },
        ..cfg.pipeline
    };
    let (_, keyframes) =
        customize_keyframes(source, source_prompt, target, &params, models.schedule(), &pipeline)?;
    Ok((keyframes, losses))
}

/// Customizes the held-out clip of `(class, seed)` toward [`target_prompt`]
/// and scores the keyframes.
pub fn run_cell(models: &ToyModels, class: MotionClass, seed: u64, arm: Arm, cfg: &GridConfig) -> Result<CellResult> {
    let clip = held_out_clip(class, KEYFRAMES, seed)?;
    let target = target_prompt(class, &clip.spec);
    let (out, losses) = customize(models, &clip.video, &clip.prompt, &target, arm, cfg, seed)?;
    Ok(CellResult {
        clip_id: clip.id,
        arm,
        class,
        seed,
        motion: motion_preservation(&clip.video, &out)?,
        alignment: models.classifier.predict(&out).alignment(&target),
        consistency: frame_consistency(&out)?.score,
        target,
        loss_head: losses.map(|l| l.0),
        loss_tail: losses.map(|l| l.1),
    })
}

/// Every `(class, seed)` cell for one arm.
pub fn run_arm(models: &ToyModels, arm: Arm, cfg: &GridConfig, seeds: &[u64]) -> Result<Vec<CellResult>> {
    let mut out = Vec::with_capacity(GRID_CLASSES.len() * seeds.len());
    for class in GRID_CLASSES {
        for &seed in seeds {
            out.push(run_cell(models, class, seed, arm, cfg)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub motion: f64,
    pub alignment: f64,
    pub consistency: f64,
    pub cells: usize,
}

pub fn summarize(arm: Arm, cells: &[CellResult]) -> ArmSummary {
    let n = cells.len().max(1) as f64;
    let mean = |f: fn(&CellResult) -> f64| cells.iter().map(f).sum::<f64>() / n;
    ArmSummary {
        arm,
        motion: mean(|c| c.motion),
        alignment: mean(|c| c.alignment),
        consistency: mean(|c| c.consistency),
        cells: cells.len(),
    }
}

/// The four adapted arms followed by the frozen arm.
pub fn ablation_arms() -> Vec<Arm> {
    let mut arms = Vec::new();
    for loss in [DistillLoss::Cos, DistillLoss::L2] {
        for target in [AdaptTarget::TemporalAttention, AdaptTarget::SpatialAndConditioning] {
            arms.push(Arm::adapted(loss, target));
        }
    }
    arms.push(Arm::frozen());
    arms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardResult {
    pub seed: u64,
    pub versus_reversed: f64,
    pub versus_forward: f64,
    pub alignment: f64,
}

/// Distils the reversed held-out clip of `class` and compares the generated
/// track with the reversed and the original source.
pub fn backward_motion(
    models: &ToyModels,
    class: MotionClass,
    backward: MotionClass,
    seed: u64,
    cfg: &GridConfig,
) -> Result<BackwardResult> {
    let clip = held_out_clip(class, KEYFRAMES, seed)?;
    let reversed = reverse_clip(&clip.video);
    let mut reversed_prompt = clip.prompt.clone();
    reversed_prompt.motion = backward;
    let target = target_prompt(backward, &clip.spec);
    let arm = Arm::adapted(cfg.adapt.loss, AdaptTarget::TemporalAttention);
    let (out, _) = customize(models, &reversed, &reversed_prompt, &target, arm, cfg, seed)?;
    Ok(BackwardResult {
        seed,
        versus_reversed: motion_preservation(&reversed, &out)?,
        versus_forward: motion_preservation(&clip.video, &out)?,
        alignment: models.classifier.predict(&out).alignment(&target),
    })
}
