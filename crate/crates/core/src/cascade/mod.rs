//! Three-stage generation: keyframes from inverted latents, frozen temporal
//! interpolation, frozen 2x spatial upscaling.

mod interp;
mod sr;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use interp::{
    decode_window, encode_window, interpolate_frames, interpolated_len, keyframe_slots,
    train_interpolator, window_pool, InterpTrainConfig, Interpolator, WindowMatching, INSERTED,
    WINDOW,
};
pub use sr::{downsample, super_resolve, train_upscaler, Upscaler, UpscalerConfig};

use crate::conditioning::{appearance_invariant, encode_prompt, StructuredPrompt};
use crate::corpus::{write_clip, ClipHeader};
use crate::denoiser::DenoiserParams;
use crate::diffusion::{ddim_invert, sample, SamplerConfig};
use crate::error::{Result, VmcError};
use crate::schedule::NoiseSchedule;
use crate::video::VideoTensor;

/// Keyframe model plus the two frozen downstream stages. The downstream
/// hashes are taken at construction and checked before every pipeline run.
#[derive(Debug, Clone)]
pub struct CascadeBundle {
    pub keyframe_params: DenoiserParams,
    pub keyframe_schedule: NoiseSchedule,
    interp: Interpolator,
    sr: Upscaler,
    interp_hash: String,
    sr_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenHashes {
    pub interp: String,
    pub sr: String,
}

impl CascadeBundle {
    pub fn new(
        keyframe_params: DenoiserParams,
        keyframe_schedule: NoiseSchedule,
        interp: Interpolator,
        sr: Upscaler,
    ) -> Self {
        let interp_hash = interp.content_hash();
        let sr_hash = sr.content_hash();
        Self {
            keyframe_params,
            keyframe_schedule,
            interp,
            sr,
            interp_hash,
            sr_hash,
        }
    }

    /// The same frozen stages around different keyframe weights.
    pub fn with_keyframe_params(&self, params: DenoiserParams) -> Self {
        Self {
            keyframe_params: params,
            ..self.clone()
        }
    }

    pub fn interpolator(&self) -> &Interpolator {
        &self.interp
    }

    pub fn upscaler(&self) -> &Upscaler {
        &self.sr
    }

    /// Hashes recorded at construction.
    pub fn recorded_hashes(&self) -> FrozenHashes {
        FrozenHashes {
            interp: self.interp_hash.clone(),
            sr: self.sr_hash.clone(),
        }
    }

    /// Hashes of the stages as they are now.
    pub fn current_hashes(&self) -> FrozenHashes {
        FrozenHashes {
            interp: self.interp.content_hash(),
            sr: self.sr.content_hash(),
        }
    }

    pub fn verify_frozen(&self) -> Result<()> {
        let (rec, now) = (self.recorded_hashes(), self.current_hashes());
        for (what, expected, found) in [
            ("interpolation stage", rec.interp, now.interp),
            ("super-resolution stage", rec.sr, now.sr),
        ] {
            if expected != found {
                return Err(VmcError::HashMismatch {
                    what: what.into(),
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }
}

/// Conditioning used while inverting the source clip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionPrompt {
    #[default]
    AppearanceInvariant,
    Source,
}

impl InversionPrompt {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "invariant" | "appearance_invariant" => Ok(Self::AppearanceInvariant),
            "source" => Ok(Self::Source),
            other => Err(VmcError::Config(format!(
                "unknown inversion conditioning `{other}` (invariant, source)"
            ))),
        }
    }

    pub fn resolve(self, source_prompt: &StructuredPrompt) -> StructuredPrompt {
        match self {
            Self::AppearanceInvariant => appearance_invariant(source_prompt),
            Self::Source => source_prompt.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub inversion_steps: usize,
    #[serde(default)]
    pub inversion_prompt: InversionPrompt,
    pub sampler: SamplerConfig,
    pub interp_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inversion_steps: 50,
            inversion_prompt: InversionPrompt::default(),
            sampler: SamplerConfig::default(),
            interp_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub keyframes_s: f64,
    pub interpolate_s: f64,
    pub upscale_s: f64,
}

/// Final video and every intermediate of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Deepest inverted latent, in model space.
    pub latent: VideoTensor,
    /// Generated keyframes in `[0,1]`.
    pub keyframes: VideoTensor,
    pub interpolated: VideoTensor,
    pub output: VideoTensor,
    pub timings: StageTimings,
}

/// Keyframe stage: invert `source` under the appearance-invariant form
/// of `source_prompt` (or the prompt itself, per `cfg.inversion_prompt`),
/// then sample under `target_prompt` from that latent.
/// Returns the latent and the keyframes in `[0,1]`.
pub fn customize_keyframes(
    source: &VideoTensor,
    source_prompt: &StructuredPrompt,
    target_prompt: &StructuredPrompt,
    params: &DenoiserParams,
    s: &NoiseSchedule,
    cfg: &PipelineConfig,
) -> Result<(VideoTensor, VideoTensor)> {
    let c_inv = encode_prompt(&cfg.inversion_prompt.resolve(source_prompt));
    let latent = ddim_invert(&source.to_signal(), params, &c_inv, cfg.inversion_steps, s)?.into_latent();
    let shape = (source.frame_count(), source.height(), source.width());
    let out = sample(params, &encode_prompt(target_prompt), &cfg.sampler, s, shape, Some(&latent))?;
    Ok((latent, out.from_signal().clamp_unit()))
}

/// Full cascade on a `[0,1]` source clip whose keyframe weights have already
/// been adapted to it.
pub fn vmc_pipeline(
    source: &VideoTensor,
    source_prompt: &StructuredPrompt,
    target_prompt: &StructuredPrompt,
    bundle: &CascadeBundle,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    bundle.verify_frozen()?;
    let mut timings = StageTimings::default();
    let clock = Instant::now();
    let (latent, keyframes) = customize_keyframes(
        source,
        source_prompt,
        target_prompt,
        &bundle.keyframe_params,
        &bundle.keyframe_schedule,
        cfg,
    )?;
    timings.keyframes_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let interpolated = interpolate_frames(&keyframes, &bundle.interp, cfg.interp_seed)?;
    timings.interpolate_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let output = super_resolve(&interpolated, &bundle.sr)?;
    timings.upscale_s = clock.elapsed().as_secs_f64();
    bundle.verify_frozen()?;
    Ok(PipelineOutput {
        latent,
        keyframes,
        interpolated,
        output,
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub source_prompt: StructuredPrompt,
    pub target_prompt: StructuredPrompt,
    pub config: PipelineConfig,
    pub keyframe_params_hash: String,
    pub frozen: FrozenHashes,
    pub source_hash: String,
    pub output_hash: String,
    pub timings: StageTimings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

/// File names inside a run directory.
pub const RUN_FILES: [&str; 5] = [
    "source.clip",
    "latent.clip",
    "keyframes.clip",
    "interpolated.clip",
    "final.clip",
];

/// Writes the source, every intermediate and `manifest.json` into `dir`.
pub fn write_run_dir(
    dir: &Path,
    source: &VideoTensor,
    out: &PipelineOutput,
    manifest: &RunManifest,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let videos = [source, &out.latent, &out.keyframes, &out.interpolated, &out.output];
    for (name, v) in RUN_FILES.iter().zip(videos) {
        let mut header = ClipHeader::for_video(v);
        if *name == "source.clip" {
            header.prompt = Some(manifest.source_prompt.clone());
        } else if *name != "latent.clip" {
            header.prompt = Some(manifest.target_prompt.clone());
        }
        write_clip(&dir.join(name), v, &header)?;
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests;
