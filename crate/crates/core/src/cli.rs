//! Command-line surface. Every command writes its outputs plus a
//! `manifest.json` recording inputs, configuration, seeds, code version and
//! file hashes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cascade::{
    train_interpolator, train_upscaler, vmc_pipeline, write_run_dir, InterpTrainConfig,
    InversionPrompt, Interpolator, PipelineConfig, RunManifest, Upscaler, UpscalerConfig,
    RUN_FILES,
};
use crate::conditioning::{encode_prompt, MotionClass, StructuredPrompt};
use crate::corpus::{
    build_training_corpus, held_out_clip, read_clip, read_index, write_clip, write_index,
    ClipHeader, IndexEntry, Split,
};
use crate::denoiser::{load_checkpoint, save_checkpoint, DenoiserParams};
use crate::diffusion::{ddim_invert, train_base, SamplerConfig, TrainConfig};
use crate::error::{Result, VmcError};
use crate::experiment::{ablation_arms, run_arm, summarize, Arm, GridConfig, ToyModels, ToyRecipe};
use crate::metrics::{
    frame_consistency, markdown_table, motion_preservation, prompt_alignment, write_metric_csv,
    FactorClassifier, MetricRow, SummaryRow, ALIGNMENT_METRIC, CONSISTENCY_METRIC, MOTION_METRIC,
};
use crate::motion::{adapt_temporal_attention, AdaptConfig, AdaptTarget, DistillLoss};
use crate::netpbm::{write_pbm, write_pgm};
use crate::optim::AdamWConfig;
use crate::schedule::NoiseSchedule;
use crate::video::VideoTensor;

#[derive(Debug, Parser)]
#[command(name = "vmc", version, about = "Toy video motion customization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Render the synthetic training corpus and the held-out clips.
    GenCorpus(GenCorpusArgs),
    /// Train the keyframe denoiser on a generated corpus.
    TrainBase(TrainArgs),
    /// Train the frame interpolation stage.
    TrainInterp(TrainArgs),
    /// Train the 2x spatial upscaler.
    TrainSr(TrainArgs),
    /// Adapt a base checkpoint to the motion of one clip.
    Distill(DistillArgs),
    /// DDIM-invert a clip into its deepest latent.
    Invert(InvertArgs),
    /// Run the full cascade toward a target prompt.
    Generate(GenerateArgs),
    /// Score a generation run.
    Eval(EvalArgs),
    /// Run the loss / adapted-tensor / frozen ablation grid.
    Ablate(AblateArgs),
    /// Render frame grids for every clip in a directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub count: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long)]
    pub seed: u64,
    /// Held-out clips rendered per motion class.
    #[arg(long, default_value_t = 3)]
    pub held_out: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory (train-base only).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// JSON configuration; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the number of optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Base checkpoint stem.
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    /// `cos` or `l2`.
    #[arg(long, default_value = "cos")]
    pub loss: String,
    /// `temporal` or `spatial`.
    #[arg(long, default_value = "temporal")]
    pub target: String,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Prompt JSON; defaults to the appearance-invariant clip prompt.
    #[arg(long)]
    pub prompt: Option<String>,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// `invariant` or `source`.
    #[arg(long, default_value = "invariant")]
    pub conditioning: String,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Keyframe checkpoint stem, usually the output of `distill`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub interp: PathBuf,
    #[arg(long)]
    pub sr: PathBuf,
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub target_prompt: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// PipelineConfig JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub inversion_steps: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub conditioning: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `generate`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Corpus used to fit the classifier when `--classifier` does not exist yet.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Cache of trained toy models; trained on first use.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// First grid seed; the grid uses `seed..seed+seeds`.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// GridConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
}

/// Process exit status for an error.
pub fn exit_code(err: &VmcError) -> i32 {
    match err {
        VmcError::Checkpoint(_) | VmcError::HashMismatch { .. } => 3,
        VmcError::MetricPrerequisite(_) => 4,
        _ => 2,
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenCorpus(a) => gen_corpus(a),
        Cmd::TrainBase(a) => train_base_cmd(a),
        Cmd::TrainInterp(a) => train_interp_cmd(a),
        Cmd::TrainSr(a) => train_sr_cmd(a),
        Cmd::Distill(a) => distill(a),
        Cmd::Invert(a) => invert(a),
        Cmd::Generate(a) => generate(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Ablate(a) => ablate(a),
        Cmd::Report(a) => report(a),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub git_describe: String,
    pub config: Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    #[serde(default)]
    pub extra: Value,
}

pub fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = fs::read(path)?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// `git describe` of the working tree, or `unknown` outside a repository.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn ckpt_files(stem: &Path) -> Vec<PathBuf> {
    let base = stem.with_extension("");
    ["bin", "json"].iter().map(|e| base.with_extension(e)).collect()
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths.iter().map(|p| hash_file(p)).collect()
}

fn write_manifest(
    dir: &Path,
    command: &str,
    seed: Option<u64>,
    config: Value,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    extra: Value,
) -> Result<()> {
    let m = CommandManifest {
        command: command.into(),
        seed,
        git_describe: git_describe(),
        config,
        inputs: hashes(inputs)?,
        outputs: hashes(outputs)?,
        extra,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| VmcError::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| VmcError::Config(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn parse_prompt(text: &str) -> Result<StructuredPrompt> {
    StructuredPrompt::from_json(text)
}

fn open_clip(path: &Path) -> Result<(VideoTensor, ClipHeader)> {
    if !path.exists() {
        return Err(VmcError::Config(format!("clip {} does not exist", path.display())));
    }
    read_clip(path)
}

fn clip_prompt(header: &ClipHeader, path: &Path) -> Result<StructuredPrompt> {
    header
        .prompt
        .clone()
        .ok_or_else(|| VmcError::Config(format!("{} carries no prompt", path.display())))
}

/// Checkpoint provenance for stages that need their schedule back at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageProvenance {
    schedule: NoiseSchedule,
    #[serde(default)]
    sampler_steps: Option<usize>,
    #[serde(default)]
    adapt: Option<Value>,
}

fn load_stage(stem: &Path) -> Result<(DenoiserParams, NoiseSchedule, Option<usize>)> {
    let (params, manifest) = load_checkpoint(stem)?;
    let prov: Option<StageProvenance> = manifest
        .provenance
        .and_then(|v| serde_json::from_value(v).ok());
    Ok(match prov {
        Some(p) => (params, p.schedule, p.sampler_steps),
        None => (params, NoiseSchedule::toy(), None),
    })
}

fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let train = build_training_corpus(a.count, a.frames, a.seed)?;
    let mut index = Vec::new();
    let mut outputs = Vec::new();
    let mut write = |id: &str, split: Split, spec_seed: u64, video: &VideoTensor, prompt: &StructuredPrompt, spec| -> Result<()> {
        let file = format!("clips/{id}.clip");
        let header = ClipHeader {
            prompt: Some(prompt.clone()),
            seed: Some(spec_seed),
            spec: Some(spec),
            ..ClipHeader::for_video(video)
        };
        let path = a.out.join(&file);
        write_clip(&path, video, &header)?;
        outputs.push(path);
        index.push(IndexEntry {
            id: id.into(),
            file,
            prompt: prompt.clone(),
            seed: spec_seed,
            split,
        });
        Ok(())
    };
    for e in &train {
        write(&e.id, e.split, e.spec.seed, &e.video, &e.prompt, e.spec.clone())?;
    }
    for class in MotionClass::ALL {
        for s in 0..a.held_out {
            let e = held_out_clip(*class, a.frames, a.seed.wrapping_add(s))?;
            write(&e.id, e.split, e.spec.seed, &e.video, &e.prompt, e.spec.clone())?;
        }
    }
    let index_path = a.out.join("index.jsonl");
    write_index(&index_path, &index)?;
    outputs.push(index_path);
    write_manifest(
        &a.out,
        "gen-corpus",
        Some(a.seed),
        json!({"count": a.count, "frames": a.frames, "held_out_per_class": a.held_out}),
        &[],
        &outputs,
        json!({"clips": index.len()}),
    )?;
    println!("wrote {} clips to {}", index.len(), a.out.display());
    Ok(())
}

type Labelled = Vec<(VideoTensor, StructuredPrompt)>;

fn load_corpus(dir: &Path, split: Split) -> Result<(Labelled, Vec<PathBuf>)> {
    let index = read_index(&dir.join("index.jsonl"))?;
    let mut pairs = Vec::new();
    let mut files = Vec::new();
    for e in index.into_iter().filter(|e| e.split == split) {
        let path = dir.join(&e.file);
        let (v, _) = open_clip(&path)?;
        pairs.push((v, e.prompt));
        files.push(path);
    }
    if pairs.is_empty() {
        return Err(VmcError::EmptyCorpus);
    }
    Ok((pairs, files))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseJob {
    pub train: TrainConfig,
    pub schedule: NoiseSchedule,
}

impl Default for BaseJob {
    fn default() -> Self {
        Self {
            train: TrainConfig::toy_recipe(),
            schedule: NoiseSchedule::toy(),
        }
    }
}

fn train_base_cmd(a: TrainArgs) -> Result<()> {
    let corpus_dir = a
        .corpus
        .as_deref()
        .ok_or_else(|| VmcError::Config("train-base needs --corpus".into()))?;
    let mut job: BaseJob = read_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        job.train.steps = s;
    }
    let (corpus, files) = load_corpus(corpus_dir, Split::Train)?;
    let report = train_base(&corpus, &job.train, &job.schedule, a.seed)?;
    let prov = StageProvenance {
        schedule: job.schedule.clone(),
        sampler_steps: None,
        adapt: None,
    };
    let stem = a.out.join("base");
    save_checkpoint(&report.params, &stem, Some(serde_json::to_value(&prov)?))?;
    let loss = a.out.join("loss.csv");
    report.trace.write_csv(&loss)?;
    let mut outputs = ckpt_files(&stem);
    outputs.push(loss);
    write_manifest(&a.out, "train-base", Some(a.seed), serde_json::to_value(&job)?, &files, &outputs, json!({
        "loss_head": report.trace.head_mean(100),
        "loss_tail": report.trace.tail_mean(100),
    }))?;
    println!("base loss {:.4} -> {:.4}", report.trace.head_mean(100), report.trace.tail_mean(100));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpJob {
    pub train: InterpTrainConfig,
    pub schedule: NoiseSchedule,
    pub sampler_steps: usize,
}

impl Default for InterpJob {
    fn default() -> Self {
        Self {
            train: InterpTrainConfig::default(),
            schedule: NoiseSchedule::toy(),
            sampler_steps: 25,
        }
    }
}

fn train_interp_cmd(a: TrainArgs) -> Result<()> {
    let mut job: InterpJob = read_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        job.train.train.steps = s;
    }
    let report = train_interpolator(&job.train, &job.schedule, a.seed)?;
    let prov = StageProvenance {
        schedule: job.schedule.clone(),
        sampler_steps: Some(job.sampler_steps),
        adapt: None,
    };
    let stem = a.out.join("interp");
    save_checkpoint(&report.params, &stem, Some(serde_json::to_value(&prov)?))?;
    let loss = a.out.join("loss.csv");
    report.trace.write_csv(&loss)?;
    let mut outputs = ckpt_files(&stem);
    outputs.push(loss);
    write_manifest(&a.out, "train-interp", Some(a.seed), serde_json::to_value(&job)?, &[], &outputs, Value::Null)?;
    println!("interpolator loss {:.4} -> {:.4}", report.trace.head_mean(50), report.trace.tail_mean(50));
    Ok(())
}

fn train_sr_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg: UpscalerConfig = read_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let (model, losses) = train_upscaler(&cfg, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("sr.json");
    fs::write(&path, model.to_json()?)?;
    let loss = a.out.join("loss.csv");
    let mut text = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(&loss, text)?;
    write_manifest(&a.out, "train-sr", Some(a.seed), serde_json::to_value(&cfg)?, &[], &[path, loss], Value::Null)?;
    println!("upscaler loss {:.5}", losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn distill(a: DistillArgs) -> Result<()> {
    let cfg = AdaptConfig {
        steps: a.steps,
        optimizer: AdamWConfig {
            lr: a.lr,
            ..AdamWConfig::default()
        },
        loss: DistillLoss::parse(&a.loss)?,
        target: AdaptTarget::parse(&a.target)?,
        ..AdaptConfig::default()
    };
    let (params, schedule, _) = load_stage(&a.base)?;
    let (video, header) = open_clip(&a.clip)?;
    let prompt = match &a.prompt {
        Some(p) => parse_prompt(p)?,
        None => crate::conditioning::appearance_invariant(&clip_prompt(&header, &a.clip)?),
    };
    let report = adapt_temporal_attention(&params, &video, &prompt, &cfg, &schedule, a.seed)?;
    let prov = StageProvenance {
        schedule,
        sampler_steps: None,
        adapt: Some(serde_json::to_value(&report.provenance)?),
    };
    let stem = a.out.join("adapted");
    save_checkpoint(&report.params, &stem, Some(serde_json::to_value(&prov)?))?;
    let loss = a.out.join("loss.csv");
    report.trace.write_csv(&loss)?;
    let mut inputs = ckpt_files(&a.base);
    inputs.push(a.clip.clone());
    let mut outputs = ckpt_files(&stem);
    outputs.push(loss);
    write_manifest(&a.out, "distill", Some(a.seed), serde_json::to_value(&cfg)?, &inputs, &outputs, json!({
        "prompt": prompt,
        "loss_head": report.trace.head_mean(50),
        "loss_tail": report.trace.tail_mean(50),
        "degenerate_rows": report.degenerate_rows,
    }))?;
    println!(
        "distilled {} steps, loss {:.4} -> {:.4}",
        a.steps,
        report.trace.head_mean(50),
        report.trace.tail_mean(50)
    );
    Ok(())
}

fn invert(a: InvertArgs) -> Result<()> {
    let (params, schedule, _) = load_stage(&a.ckpt)?;
    let (video, header) = open_clip(&a.clip)?;
    let mode = InversionPrompt::parse(&a.conditioning)?;
    let prompt = mode.resolve(&clip_prompt(&header, &a.clip)?);
    let inv = ddim_invert(&video.to_signal(), &params, &encode_prompt(&prompt), a.steps, &schedule)?;
    let path = a.out.join("latent.clip");
    let deepest = inv.deepest_t();
    write_clip(&path, inv.latent(), &ClipHeader::for_video(inv.latent()))?;
    let mut inputs = ckpt_files(&a.ckpt);
    inputs.push(a.clip.clone());
    write_manifest(&a.out, "invert", None, json!({"steps": a.steps, "conditioning": mode}), &inputs, &[path], json!({
        "prompt": prompt,
        "deepest_t": deepest,
    }))?;
    println!("inverted to t={deepest}");
    Ok(())
}

fn load_interp(stem: &Path) -> Result<Interpolator> {
    let (params, schedule, steps) = load_stage(stem)?;
    Ok(Interpolator {
        params,
        schedule,
        sampler_steps: steps.unwrap_or(25),
    })
}

fn load_sr(path: &Path) -> Result<Upscaler> {
    let text = fs::read_to_string(path)
        .map_err(|e| VmcError::Checkpoint(format!("cannot read upscaler {}: {e}", path.display())))?;
    Upscaler::from_json(&text)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let (params, schedule, _) = load_stage(&a.ckpt)?;
    let interp = load_interp(&a.interp)?;
    let sr = load_sr(&a.sr)?;
    let (source, header) = open_clip(&a.clip)?;
    let source_prompt = clip_prompt(&header, &a.clip)?;
    let target = parse_prompt(&a.target_prompt)?;
    let mut cfg: PipelineConfig = match a.config.as_deref() {
        Some(_) => read_config(a.config.as_deref())?,
        None => PipelineConfig {
            sampler: SamplerConfig {
                clip_x0: true,
                ..SamplerConfig::default()
            },
            ..PipelineConfig::default()
        },
    };
    cfg.sampler.seed = a.seed;
    cfg.interp_seed = a.seed;
    if let Some(s) = a.inversion_steps {
        cfg.inversion_steps = s;
    }
    if let Some(e) = a.eta {
        cfg.sampler.eta = e;
    }
    if let Some(c) = &a.conditioning {
        cfg.inversion_prompt = InversionPrompt::parse(c)?;
    }
    let bundle = crate::cascade::CascadeBundle::new(params, schedule, interp, sr);
    let out = vmc_pipeline(&source, &source_prompt, &target, &bundle, &cfg)?;
    let manifest = RunManifest {
        source_prompt,
        target_prompt: target,
        config: cfg,
        keyframe_params_hash: bundle.keyframe_params.content_hash(),
        frozen: bundle.recorded_hashes(),
        source_hash: source.content_hash(),
        output_hash: out.output.content_hash(),
        timings: out.timings.clone(),
        extra: Some(json!({"git_describe": git_describe()})),
    };
    write_run_dir(&a.out, &source, &out, &manifest)?;
    write_pgm(&a.out.join("keyframes.pgm"), &out.keyframes, 8)?;
    write_pgm(&a.out.join("final.pgm"), &out.output, 8)?;
    let mut inputs = ckpt_files(&a.ckpt);
    inputs.extend(ckpt_files(&a.interp));
    inputs.push(a.sr.clone());
    inputs.push(a.clip.clone());
    let outputs: Vec<PathBuf> = RUN_FILES.iter().map(|f| a.out.join(f)).collect();
    write_manifest(&a.out, "generate", Some(a.seed), serde_json::to_value(cfg)?, &inputs, &outputs, serde_json::to_value(&manifest)?)?;
    println!(
        "generated {} frames at {}x{} into {}",
        out.output.frame_count(),
        out.output.height(),
        out.output.width(),
        a.out.display()
    );
    Ok(())
}

fn load_classifier(a: &EvalArgs) -> Result<FactorClassifier> {
    let Some(path) = &a.classifier else {
        return Err(VmcError::MetricPrerequisite(
            "prompt alignment needs --classifier (pass --corpus as well to fit one)".into(),
        ));
    };
    if path.exists() {
        let c = FactorClassifier::from_json(&fs::read_to_string(path)?)?;
        c.check_prerequisite()?;
        return Ok(c);
    }
    let corpus = a.corpus.as_deref().ok_or_else(|| {
        VmcError::MetricPrerequisite(format!(
            "{} does not exist; pass --corpus to fit it",
            path.display()
        ))
    })?;
    let (train, _) = load_corpus(corpus, Split::Train)?;
    let split = train.len() * 4 / 5;
    let c = FactorClassifier::train(&train[..split], &train[split..])?;
    c.check_prerequisite()?;
    fs::write(path, c.to_json()?)?;
    Ok(c)
}

fn eval(a: EvalArgs) -> Result<()> {
    let classifier = load_classifier(&a)?;
    let (source, _) = open_clip(&a.run.join("source.clip"))?;
    let (keyframes, _) = open_clip(&a.run.join("keyframes.clip"))?;
    let (output, header) = open_clip(&a.run.join("final.clip"))?;
    let target = header
        .prompt
        .ok_or_else(|| VmcError::Config("final.clip carries no target prompt".into()))?;
    let id = a
        .run
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".into());
    let low = crate::cascade::downsample(&output)?;
    let motion = motion_preservation(&source, &low)?;
    let alignment = prompt_alignment(&keyframes, &target, Some(&classifier))?;
    let consistency = frame_consistency(&low)?.score;
    let rows = vec![
        MetricRow { clip_id: id.clone(), metric: MOTION_METRIC.into(), value: motion },
        MetricRow { clip_id: id.clone(), metric: ALIGNMENT_METRIC.into(), value: alignment },
        MetricRow { clip_id: id.clone(), metric: CONSISTENCY_METRIC.into(), value: consistency },
    ];
    let out = a.out.clone().unwrap_or_else(|| a.run.join("eval"));
    fs::create_dir_all(&out)?;
    let csv = out.join("metrics.csv");
    write_metric_csv(&csv, &rows)?;
    let table = markdown_table(&[SummaryRow { method: id, alignment, consistency, motion }]);
    let md = out.join("report.md");
    fs::write(&md, &table)?;
    let inputs: Vec<PathBuf> = ["source.clip", "keyframes.clip", "final.clip"].iter().map(|f| a.run.join(f)).collect();
    write_manifest(&out, "eval", None, Value::Null, &inputs, &[csv, md], Value::Null)?;
    print!("{table}");
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg: GridConfig = read_config(a.config.as_deref())?;
    let mut log = |m: &str| eprintln!("{m}");
    let models = ToyModels::load_or_train(&a.models, &ToyRecipe::default(), &mut log)?;
    let seeds: Vec<u64> = (0..a.seeds).map(|i| a.seed + i).collect();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut all = Vec::new();
    for arm in ablation_arms() {
        eprintln!("arm {}", arm.name());
        let cells = run_arm(&models, arm, &cfg, &seeds)?;
        for c in &cells {
            let id = format!("{}/{}", c.clip_id, arm.name());
            rows.push(MetricRow { clip_id: id.clone(), metric: MOTION_METRIC.into(), value: c.motion });
            rows.push(MetricRow { clip_id: id.clone(), metric: ALIGNMENT_METRIC.into(), value: c.alignment });
            rows.push(MetricRow { clip_id: id, metric: CONSISTENCY_METRIC.into(), value: c.consistency });
        }
        summary.push(summarize(arm, &cells));
        all.extend(cells);
    }
    fs::create_dir_all(&a.out)?;
    let csv = a.out.join("cells.csv");
    write_metric_csv(&csv, &rows)?;
    let table = markdown_table(
        &summary
            .iter()
            .map(|s| SummaryRow {
                method: s.arm.name(),
                alignment: s.alignment,
                consistency: s.consistency,
                motion: s.motion,
            })
            .collect::<Vec<_>>(),
    );
    let md = a.out.join("summary.md");
    fs::write(&md, &table)?;
    let js = a.out.join("cells.json");
    fs::write(&js, serde_json::to_string_pretty(&all)?)?;
    let mut inputs = ckpt_files(&a.models.join("base"));
    inputs.extend(ckpt_files(&a.models.join("interp")));
    inputs.push(a.models.join("sr.json"));
    inputs.push(a.models.join("classifier.json"));
    let frozen_arm = summary.iter().find(|s| s.arm == Arm::frozen()).map(|s| s.motion);
    write_manifest(&a.out, "ablate", Some(a.seed), serde_json::to_value(&cfg)?, &inputs, &[csv, md, js], json!({
        "seeds": seeds,
        "summary": summary,
        "frozen_motion": frozen_arm,
    }))?;
    print!("{table}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.run.join("grids"));
    fs::create_dir_all(&out)?;
    let mut entries: Vec<PathBuf> = fs::read_dir(&a.run)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "clip"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(VmcError::Config(format!("no .clip files in {}", a.run.display())));
    }
    let mut md = String::from("| clip | frames | size | grid | mask |\n|---|---|---|---|---|\n");
    let mut outputs = Vec::new();
    for path in &entries {
        let (v, _) = open_clip(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
        let shown = if stem == "latent" {
            v.with_frames(v.frames().mapv(|x| 0.5 + 0.25 * x))?
        } else {
            v
        };
        let pgm = out.join(format!("{stem}.pgm"));
        let pbm = out.join(format!("{stem}.pbm"));
        write_pgm(&pgm, &shown, a.cols)?;
        write_pbm(&pbm, &shown, a.cols)?;
        md.push_str(&format!(
            "| {stem} | {} | {}x{} | {stem}.pgm | {stem}.pbm |\n",
            shown.frame_count(),
            shown.height(),
            shown.width()
        ));
        outputs.push(pgm);
        outputs.push(pbm);
    }
    let index = out.join("index.md");
    fs::write(&index, &md)?;
    outputs.push(index);
    write_manifest(&out, "report", None, json!({"cols": a.cols}), &entries, &outputs, Value::Null)?;
    print!("{md}");
    Ok(())
}
