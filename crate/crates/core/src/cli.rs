//! The `dri-iqa` command line: `synth`, `pretrain`, `train`, `eval`,
//! `predict` and `plot`.
//!
//! Every run that writes files also writes `run_manifest.json` into its run
//! directory. Usage and configuration errors exit with status 2, other
//! failures with 1; errors are printed as one `error[kind]: message` line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::buffer::ImageBuffer;
use crate::degrade::{apply_recipe, sample_recipe, severity_index, Palette, JPEG_CODEC, MAX_RECIPE_STEPS};
use crate::error::{Error, Result};
use crate::eval::{emit_scatter_plot, partition, EvaluationRecord, ProtocolSpec};
use crate::predictor::predict_mos;
use crate::rng::{self, domain};
use crate::trainer::stage2::dump_restorations;
use crate::trainer::{
    pretrain_stage1, restoration_l2, train_stage2, write_atomic, write_loss_csv, Checkpoint, Model, Sample,
    TrainConfig,
};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const CACHE_ENV: &str = "DRI_IQA_CACHE";

#[derive(Parser, Debug)]
#[command(name = "dri-iqa", version, about = "Dual-representation no-reference image quality assessment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Degrade clean images with random recipes and write a scored manifest.
    Synth(SynthArgs),
    /// Stage 1: contrastive pretraining of the encoder.
    Pretrain(PretrainArgs),
    /// Stage 2: joint training from a stage-1 checkpoint.
    Train(TrainArgs),
    /// Multi-split, multi-seed SROCC/PLCC evaluation.
    Eval(EvalArgs),
    /// Score one image.
    Predict(PredictArgs),
    /// Scatter plot of evaluation records.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory of clean PNG/JPEG images.
    #[arg(long, required_unless_present = "toy", conflicts_with = "toy")]
    pub input_dir: Option<PathBuf>,
    /// Generate this many procedural clean images instead of reading a directory.
    #[arg(long)]
    pub toy: Option<usize>,
    /// Side length of generated toy images.
    #[arg(long, default_value_t = 96)]
    pub toy_size: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub pairs_per_image: usize,
    /// JSON array of palette entries; the six default kinds if absent.
    #[arg(long)]
    pub palette_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of clean images.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Stage-1 checkpoint providing the encoder.
    #[arg(long)]
    pub stage1: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_parser = ["v1", "v2", "v3", "proposed"])]
    pub ablation: Option<String>,
    /// Write restored center crops and their loss terms under `<out>/restorations`.
    #[arg(long)]
    pub dump_restorations: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// A stage-2 checkpoint, or with `--config` a stage-1 checkpoint to retrain from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub splits: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub partition_seed: u64,
    /// Stage-2 config; retrains on each training split instead of scoring a fixed model.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Defaults to the checkpoint's `n_crops`.
    #[arg(long)]
    pub crops: Option<usize>,
    /// Defaults to the checkpoint's `crop`.
    #[arg(long)]
    pub crop_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a run manifest here.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Records CSV written by `eval`.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub split: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Provenance of one CLI run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub duration_secs: f64,
}

struct RunLog {
    subcommand: &'static str,
    started: Instant,
    started_unix: u64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl RunLog {
    fn new(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.into(), path.display().to_string());
    }

    fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.into(), path.display().to_string());
    }

    fn finish(self, dir: &Path, config: serde_json::Value, seed: u64) -> Result<()> {
        let m = RunManifest {
            subcommand: self.subcommand.into(),
            config,
            seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix: self.started_unix,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        write_atomic(&dir.join(RUN_MANIFEST), serde_json::to_string_pretty(&m)?.as_bytes())
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let (code, kind) = classify(&e);
            eprintln!("error[{kind}]: {}", e.to_string().replace('\n', " "));
            code
        }
    }
}

fn classify(e: &Error) -> (i32, &'static str) {
    match e {
        Error::Config { .. } => (2, "config"),
        Error::Palette(_) => (2, "palette"),
        Error::InvalidArgument(_) => (2, "argument"),
        Error::Manifest(_) => (2, "manifest"),
        Error::Checkpoint(_) => (2, "checkpoint"),
        Error::ImageTooSmall { .. } => (2, "image"),
        Error::Degenerate(_) => (1, "degenerate"),
        Error::Io(_) | Error::Write { .. } => (1, "io"),
        _ => (1, "runtime"),
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Predict(a) => predict(&a),
        Command::Plot(a) => plot(&a),
    }
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Sorted PNG/JPEG files of a directory.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::invalid(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no PNG or JPEG images in {}", dir.display())));
    }
    Ok(files)
}

fn load_images(dir: &Path) -> Result<Vec<ImageBuffer>> {
    image_files(dir)?.iter().map(ImageBuffer::load).collect()
}

/// Writes toy clean images into `dir` unless they are already there.
fn toy_corpus(dir: &Path, n: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    (0..n)
        .map(|i| {
            let path = dir.join(format!("clean_{i:04}.png"));
            if !path.exists() {
                let img = crate::toy::clean_image(rng::derive_seed(seed, &[domain::DATASET, i as u64]), size, size);
                let tmp = dir.join(format!("clean_{i:04}.tmp.png"));
                img.save(&tmp)?;
                std::fs::rename(&tmp, &path)?;
            }
            Ok(path)
        })
        .collect()
}

/// Manifest paths are written relative to the manifest when possible.
fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut log = RunLog::new("synth");
    if a.pairs_per_image == 0 {
        return Err(Error::invalid("--pairs-per-image must be at least 1"));
    }
    let palette = match &a.palette_config {
        Some(p) => {
            log.input("palette_config", p);
            Palette::from_json(&std::fs::read_to_string(p)?)?
        }
        None => Palette::default_six(),
    };
    let out = &a.output_dir;
    let sources = match (&a.input_dir, a.toy) {
        (Some(dir), _) => {
            log.input("input_dir", dir);
            image_files(dir)?
        }
        (None, Some(n)) => {
            if n == 0 || a.toy_size < 8 {
                return Err(Error::invalid("--toy needs at least one image of side 8 or more"));
            }
            let dir = match cache_dir() {
                Some(c) => c.join(format!("toy-{}-{n}-{}", a.seed, a.toy_size)),
                None => out.join("clean"),
            };
            log.input("toy_corpus", &dir);
            toy_corpus(&dir, n, a.toy_size, a.seed)?
        }
        (None, None) => return Err(Error::invalid("either --input-dir or --toy is required")),
    };
    let img_dir = out.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|source| Error::Write {
        path: img_dir.clone(),
        source,
    })?;
    let mut provenance = String::new();
    let mut rows = Vec::new();
    for (i, src) in sources.iter().enumerate() {
        let clean = ImageBuffer::load(src)?;
        let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        for k in 0..a.pairs_per_image {
            let recipe_seed = rng::derive_seed(a.seed, &[domain::DATASET, i as u64, k as u64 + 1]);
            let recipe = sample_recipe(&palette, recipe_seed, MAX_RECIPE_STEPS)?;
            let name = format!("{stem}_{k:02}.png");
            let path = img_dir.join(&name);
            apply_recipe(&clean, &recipe)?.save(&path)?;
            let index = severity_index(&recipe);
            let mos = crate::toy::synthetic_mos(index);
            let line = serde_json::json!({
                "image": format!("images/{name}"),
                "source": relative_to(src, out),
                "seed": recipe.seed,
                "steps": recipe.steps.iter().map(|s| serde_json::json!({
                    "kind": s.kind,
                    "severity": s.severity,
                    "parameter": s.parameter(),
                    "boost": s.boost,
                })).collect::<Vec<_>>(),
                "severity_index": index,
                "mos": mos,
                "jpeg_codec": JPEG_CODEC,
            });
            provenance.push_str(&serde_json::to_string(&line)?);
            provenance.push('\n');
            rows.push((format!("images/{name}"), mos, Some(relative_to(src, out))));
        }
    }
    let prov_path = out.join("provenance.jsonl");
    write_atomic(&prov_path, provenance.as_bytes())?;
    let manifest_path = out.join("manifest.csv");
    crate::trainer::write_manifest(&manifest_path, &rows)?;
    log.output("images", &img_dir);
    log.output("provenance", &prov_path);
    log.output("manifest", &manifest_path);
    let config = serde_json::json!({
        "pairs_per_image": a.pairs_per_image,
        "palette": palette.entries(),
        "palette_hash": palette.hash(),
        "toy": a.toy,
        "toy_size": a.toy_size,
    });
    log.finish(out, config, a.seed)?;
    println!("{}", serde_json::json!({ "images": rows.len(), "manifest": manifest_path }));
    Ok(())
}

/// Loads a config for `stage`. A file without a `stage` key takes that
/// stage's defaults; a file naming the other stage is rejected.
fn stage_config(path: &Path, stage: u8, seed: Option<u64>) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    let has_stage = text
        .lines()
        .any(|l| l.split_once(':').is_some_and(|(k, _)| k.trim() == "stage"));
    let mut cfg = if has_stage {
        TrainConfig::parse_str(&text)?
    } else {
        TrainConfig::parse_str(&format!("stage: {stage}\n{text}"))?
    };
    if cfg.stage != stage {
        return Err(Error::config("stage", format!("this subcommand needs stage: {stage}, got {}", cfg.stage)));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_json(cfg: &TrainConfig) -> serde_json::Value {
    serde_json::Value::Object(
        cfg.to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
            .collect(),
    )
}

fn pretrain(a: &PretrainArgs) -> Result<()> {
    let mut log = RunLog::new("pretrain");
    let cfg = stage_config(&a.config, 1, a.seed)?;
    let palette = cfg.load_palette()?;
    log.input("config", &a.config);
    log.input("corpus", &a.corpus);
    let corpus = load_images(&a.corpus)?;
    let dev = Device::Cpu;
    let resume = match &a.resume {
        Some(p) => {
            log.input("resume", p);
            Some(Checkpoint::load(p, &dev)?)
        }
        None => None,
    };
    let out = pretrain_stage1(&corpus, &palette, &cfg, resume.as_ref(), &dev)?;
    let ckpt = a.out.join("stage1.ckpt");
    out.checkpoint.save(&ckpt)?;
    let losses = a.out.join("losses.csv");
    write_loss_csv(&losses, &out.losses)?;
    let components = a.out.join("components.csv");
    write_loss_csv(&components, &out.components)?;
    log.output("checkpoint", &ckpt);
    log.output("losses", &losses);
    log.output("components", &components);
    log.finish(&a.out, config_json(&cfg), cfg.seed)
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut log = RunLog::new("train");
    let mut cfg = stage_config(&a.config, 2, a.seed)?;
    if let Some(ab) = &a.ablation {
        cfg.ablation = ab.parse()?;
    }
    let palette = cfg.load_palette()?;
    let dev = Device::Cpu;
    log.input("config", &a.config);
    log.input("manifest", &a.manifest);
    log.input("stage1", &a.stage1);
    let samples = crate::trainer::load_samples(&crate::trainer::read_manifest(&a.manifest)?)?;
    let stage1 = Checkpoint::load(&a.stage1, &dev)?;
    if stage1.meta.stage != 1 {
        return Err(Error::Checkpoint(format!("{} is not a stage-1 checkpoint", a.stage1.display())));
    }
    let resume = match &a.resume {
        Some(p) => {
            log.input("resume", p);
            Some(Checkpoint::load(p, &dev)?)
        }
        None => None,
    };
    let out = train_stage2(&samples, &stage1, &palette, &cfg, resume.as_ref(), &dev)?;
    let ckpt = a.out.join("stage2.ckpt");
    out.checkpoint.save(&ckpt)?;
    let losses = a.out.join("losses.csv");
    write_loss_csv(&losses, &out.losses)?;
    log.output("checkpoint", &ckpt);
    log.output("losses", &losses);

    let with_ref: Vec<&Sample> = samples.iter().filter(|s| s.reference.is_some()).collect();
    if !with_ref.is_empty() {
        let (restored, degraded) = restoration_l2(&out.model, &with_ref, cfg.crop)?;
        let path = a.out.join("restoration.json");
        let summary = serde_json::json!({ "mse_restored": restored, "mse_degraded": degraded, "n": with_ref.len() });
        write_atomic(&path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
        log.output("restoration", &path);
        if a.dump_restorations {
            let dir = a.out.join("restorations");
            let take = &with_ref[..with_ref.len().min(16)];
            dump_restorations(&out.model, take, cfg.crop, cfg.loss_weights.lambda_perceptual, &dir)?;
            log.output("restorations", &dir);
        }
    } else if a.dump_restorations {
        return Err(Error::invalid("--dump-restorations needs rows with ref_path"));
    }
    log.finish(&a.out, config_json(&cfg), cfg.seed)
}

/// One row of the records CSV written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub split: usize,
    pub seed: u64,
    pub id: String,
    pub subjective: f64,
    pub predicted: f64,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let mut log = RunLog::new("eval");
    let dev = Device::Cpu;
    log.input("manifest", &a.manifest);
    log.input("checkpoint", &a.checkpoint);
    let samples = crate::trainer::load_samples(&crate::trainer::read_manifest(&a.manifest)?)?;
    let ckpt = Checkpoint::load(&a.checkpoint, &dev)?;
    let spec = ProtocolSpec {
        splits: a.splits,
        seeds: a.seeds.clone(),
        train_fraction: a.train_fraction,
        partition_seed: a.partition_seed,
    };
    // Fails early on a bad fraction or a tiny manifest.
    partition(samples.len(), spec.train_fraction, spec.partition_seed, 0)?;

    let mut rows: Vec<RecordRow> = Vec::new();
    let mut keep = |ctx: &crate::eval::RunContext, records: &[EvaluationRecord]| {
        rows.extend(records.iter().map(|r| RecordRow {
            split: ctx.split,
            seed: ctx.seed,
            id: r.id.clone(),
            subjective: r.subjective,
            predicted: r.predicted,
        }));
    };
    let (report, config) = match &a.config {
        Some(cfg_path) => {
            log.input("config", cfg_path);
            if ckpt.meta.stage != 1 {
                return Err(Error::Checkpoint("retraining with --config needs a stage-1 checkpoint".into()));
            }
            let cfg = stage_config(cfg_path, 2, None)?;
            let palette = cfg.load_palette()?;
            let report = crate::eval::run_protocol_with(samples.len(), &spec, |ctx| {
                let run_cfg = TrainConfig {
                    seed: ctx.seed,
                    ..cfg.clone()
                };
                let (_, records) = crate::eval::train_and_score(
                    &samples,
                    &ctx.partition.train,
                    &ctx.partition.test,
                    &ckpt,
                    &palette,
                    &run_cfg,
                    &dev,
                )?;
                keep(ctx, &records);
                Ok(records)
            })?;
            (report, config_json(&cfg))
        }
        None => {
            if ckpt.meta.stage != 2 {
                return Err(Error::Checkpoint(
                    "scoring needs a stage-2 checkpoint; pass --config to retrain from stage 1".into(),
                ));
            }
            let model = Model::from_checkpoint(&ckpt, &dev)?;
            let qm = model.quality_model()?;
            let cfg = &ckpt.meta.config;
            let report = crate::eval::run_protocol_with(samples.len(), &spec, |ctx| {
                let records = crate::eval::score_rows(
                    &qm,
                    &samples,
                    &ctx.partition.test,
                    cfg.crop,
                    cfg.n_crops,
                    ctx.seed,
                    model.dtype,
                    &dev,
                )?;
                keep(ctx, &records);
                Ok(records)
            })?;
            (report, config_json(cfg))
        }
    };
    write_atomic(&a.report, serde_json::to_string_pretty(&report)?.as_bytes())?;
    let records_path = a.report.with_extension("records.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    write_atomic(&records_path, &w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)?;
    log.output("report", &a.report);
    log.output("records", &records_path);
    let dir = a.report.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let config = serde_json::json!({ "protocol": spec, "model": config });
    log.finish(dir, config, a.seeds.first().copied().unwrap_or(0))?;
    println!(
        "{}",
        serde_json::json!({ "mean_srocc": report.mean_srocc, "mean_plcc": report.mean_plcc, "runs": report.runs.len() })
    );
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let mut log = RunLog::new("predict");
    let dev = Device::Cpu;
    let ckpt_bytes = std::fs::read(&a.checkpoint)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", a.checkpoint.display())))?;
    let image_bytes = std::fs::read(&a.image)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", a.image.display())))?;
    log.input("checkpoint", &a.checkpoint);
    log.input("image", &a.image);

    let key = {
        let mut h = Sha256::new();
        h.update(&ckpt_bytes);
        h.update(&image_bytes);
        h.update(format!("{:?}/{:?}/{}", a.crops, a.crop_size, a.seed).as_bytes());
        hex::encode(h.finalize())
    };
    let cached = cache_dir().map(|d| d.join("predict").join(format!("{key}.json")));
    let text = match cached.as_ref().filter(|p| p.exists()) {
        Some(p) => std::fs::read_to_string(p)?,
        None => {
            let ckpt = Checkpoint::from_bytes(&ckpt_bytes, &dev)?;
            if ckpt.meta.stage != 2 {
                return Err(Error::Checkpoint("prediction needs a stage-2 checkpoint".into()));
            }
            let model = Model::from_checkpoint(&ckpt, &dev)?;
            let image = ImageBuffer::from_rgb8(&image::load_from_memory(&image_bytes)?.to_rgb8());
            let crop = a.crop_size.unwrap_or(ckpt.meta.config.crop);
            let n = a.crops.unwrap_or(ckpt.meta.config.n_crops);
            let p = predict_mos(&model.quality_model()?, &image, crop, n, a.seed, model.dtype, &dev)?;
            let text = serde_json::json!({ "score": p.score, "per_crop_scores": p.per_crop_scores }).to_string();
            if let Some(path) = &cached {
                write_atomic(path, text.as_bytes())?;
            }
            text
        }
    };
    println!("{text}");
    if let Some(dir) = &a.run_dir {
        let config = serde_json::json!({ "crops": a.crops, "crop_size": a.crop_size, "result": serde_json::from_str::<serde_json::Value>(&text)? });
        log.finish(dir, config, a.seed)?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::invalid(format!("cannot read records {}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn plot(a: &PlotArgs) -> Result<()> {
    let mut log = RunLog::new("plot");
    log.input("records", &a.records);
    let records: Vec<EvaluationRecord> = read_records(&a.records)?
        .into_iter()
        .filter(|r| a.split.is_none_or(|s| r.split == s) && a.seed.is_none_or(|s| r.seed == s))
        .map(|r| EvaluationRecord::new(r.id, r.subjective, r.predicted))
        .collect();
    if records.is_empty() {
        return Err(Error::invalid("no records match the selected split and seed"));
    }
    let ann = emit_scatter_plot(&records, &a.out)?;
    log.output("plot", &a.out);
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    log.finish(dir, serde_json::json!({ "split": a.split, "seed": a.seed }), a.seed.unwrap_or(0))?;
    println!("{}", serde_json::json!({ "srocc": ann.srocc, "plcc": ann.plcc, "n": records.len() }));
    Ok(())
}
