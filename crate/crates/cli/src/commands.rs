//! One entry point per subcommand. Each takes a JSON config (optional),
//! applies flag overrides on top, runs, and writes a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sifsr_core::datagen::{slice_patches, synth_scene, SynthConfig};
use sifsr_core::metrics::{
    attenuation_spectrum, center_square, evaluate_scene, radial_spectrum_windowed, write_spectra_csv,
};
use sifsr_core::objective::SifConfig;
use sifsr_core::raster::{load_raster, save_raster, write_atomic, NormStats, ScenePair};
use sifsr_core::unet::{train_sc, train_sif, write_training_log, TrainConfig, UNetConfig};
use sifsr_core::baselines::bicubic_baseline;
use sifsr_core::linops::default_mtf_sigma;

use crate::benchmark::{run_benchmark, write_report, BenchmarkConfig, Method, MethodConfig, Sharpener};
use crate::dataset::{load_dataset, load_scene, scene_dir_name, write_scene};
use crate::exit::usage;
use crate::manifest::{manifest_path_for, RunManifest};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "sifsr", version, about = "NDVI-guided super-resolution of land surface temperature")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes with references.
    Synth(SynthArgs),
    /// Train a network in sif1, sif2 or sc mode.
    Train(TrainArgs),
    /// Super-resolve one scene.
    Sharpen(SharpenArgs),
    /// Score a super-resolved raster against a scene's reference.
    Evaluate(EvaluateArgs),
    /// Run several methods over a scene directory.
    Benchmark(BenchmarkArgs),
    /// Attenuation spectra of rasters as CSV.
    Spectra(SpectraArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Sharpen(a) => sharpen(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Spectra(a) => spectra(a),
    }
}

/// Reads a JSON config, or the defaults when no file is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bytes = std::fs::read(path).map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

// ---- synth ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCommand {
    pub out: PathBuf,
    pub count: usize,
    /// Scene `i` uses `scene.seed + i`.
    pub scene: SynthConfig,
}

impl Default for SynthCommand {
    fn default() -> Self {
        Self {
            out: PathBuf::from("data"),
            count: 20,
            scene: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthCommand = load_config(args.config.as_deref())?;
    set(&mut cfg.out, args.out);
    set(&mut cfg.count, args.count);
    set(&mut cfg.scene.seed, args.seed);
    set(&mut cfg.scene.hr_size, args.size);
    set(&mut cfg.scene.scale_factor, args.scale);
    run_synth(&cfg)
}

pub fn run_synth(cfg: &SynthCommand) -> Result<()> {
    let started = Instant::now();
    if cfg.count == 0 {
        return Err(usage("count must be at least 1"));
    }
    cfg.scene.validate()?;
    let mut manifest = RunManifest::new("synth", cfg)?;
    manifest.seed = Some(cfg.scene.seed);
    for i in 0..cfg.count {
        let scene = SynthConfig {
            seed: cfg.scene.seed + i as u64,
            ..cfg.scene.clone()
        };
        let triple = synth_scene(&scene)?;
        manifest.outputs.extend(write_scene(&cfg.out.join(scene_dir_name(i)), &triple)?);
    }
    manifest.finish(started).write(&cfg.out.join(MANIFEST_FILE))
}

// ---- train ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Sif1,
    Sif2,
    Sc,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Sif1 => "sif1",
            TrainMode::Sif2 => "sif2",
            TrainMode::Sc => "sc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCommand {
    pub mode: TrainMode,
    pub data: PathBuf,
    /// Checkpoint path; the log and manifest are written next to it.
    pub out: PathBuf,
    /// Patch side on the coarse grid.
    pub lr_patch: usize,
    pub sigma_px: Option<f64>,
    pub network: UNetConfig,
    pub train: TrainConfig,
}

impl Default for TrainCommand {
    fn default() -> Self {
        Self {
            mode: TrainMode::Sif1,
            data: PathBuf::from("data"),
            out: PathBuf::from("model.json"),
            lr_patch: 16,
            sigma_px: None,
            network: UNetConfig::default(),
            train: TrainConfig::toy(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<TrainMode>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Patch side on the coarse grid.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainCommand = load_config(args.config.as_deref())?;
    set(&mut cfg.mode, args.mode);
    set(&mut cfg.data, args.data);
    set(&mut cfg.out, args.out);
    set(&mut cfg.lr_patch, args.patch);
    set(&mut cfg.train.epochs, args.epochs);
    set(&mut cfg.train.batch_size, args.batch);
    set(&mut cfg.train.lr, args.lr);
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
        cfg.network.seed = seed;
    }
    run_train(&cfg)
}

/// Log path for a checkpoint: `model.json` → `model.log.csv`.
pub fn training_log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.csv")
}

pub fn run_train(cfg: &TrainCommand) -> Result<()> {
    let started = Instant::now();
    let scenes = load_dataset(&cfg.data)?;
    let mut patches: Vec<ScenePair> = Vec::new();
    for s in &scenes {
        patches.extend(slice_patches(&s.pair, cfg.lr_patch, true)?.into_iter().map(|p| p.item));
    }
    if patches.is_empty() {
        return Err(sifsr_core::Error::Empty(format!(
            "no unmasked {}-pixel patches under {}",
            cfg.lr_patch,
            cfg.data.display()
        ))
        .into());
    }
    let stats = NormStats::from_pairs(&patches)?;
    let r = patches[0].scale_factor();
    let outcome = match cfg.mode {
        TrainMode::Sc => train_sc(&patches, &stats, &cfg.network, &cfg.train)?,
        mode => {
            let mut sif = SifConfig::preset(mode.name(), r)?;
            sif.mtf_sigma_px = cfg.sigma_px.unwrap_or_else(|| default_mtf_sigma(r));
            train_sif(&patches, &stats, &sif, &cfg.network, &cfg.train)?
        }
    };
    outcome.model.save(&cfg.out, &stats, cfg.mode.name())?;
    let log = training_log_path(&cfg.out);
    write_training_log(&outcome.history, &log)?;

    let mut manifest = RunManifest::new("train", cfg)?;
    manifest.seed = Some(cfg.train.seed);
    manifest.inputs = vec![cfg.data.clone()];
    manifest.outputs = vec![cfg.out.clone(), log];
    manifest.finish(started).write(&manifest_path_for(&cfg.out))?;
    if let Some(d) = outcome.divergence {
        return Err(sifsr_core::Error::Numeric(format!(
            "training diverged ({d}); kept the best epoch {}",
            outcome.best_epoch
        ))
        .into());
    }
    Ok(())
}

// ---- sharpen ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharpenCommand {
    pub method: Method,
    /// Scene directory holding `lst_lr.f32` and `ndvi_hr.f32`.
    pub scene: PathBuf,
    pub out: PathBuf,
    #[serde(flatten)]
    pub settings: MethodConfig,
}

impl Default for SharpenCommand {
    fn default() -> Self {
        Self {
            method: Method::Atprk,
            scene: PathBuf::from("scene"),
            out: PathBuf::from("sharpened.f32"),
            settings: MethodConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SharpenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sif_model: Option<PathBuf>,
    #[arg(long)]
    pub sc_model: Option<PathBuf>,
    #[arg(long)]
    pub var_preset: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

pub fn sharpen(args: SharpenArgs) -> Result<()> {
    let mut cfg: SharpenCommand = load_config(args.config.as_deref())?;
    set(&mut cfg.method, args.method);
    set(&mut cfg.scene, args.scene);
    set(&mut cfg.out, args.out);
    if args.sif_model.is_some() {
        cfg.settings.sif_model = args.sif_model;
    }
    if args.sc_model.is_some() {
        cfg.settings.sc_model = args.sc_model;
    }
    set(&mut cfg.settings.var_preset, args.var_preset);
    if args.sigma.is_some() {
        cfg.settings.sigma_px = args.sigma;
    }
    run_sharpen(&cfg)
}

pub fn run_sharpen(cfg: &SharpenCommand) -> Result<()> {
    let started = Instant::now();
    let scene = load_scene(&cfg.scene)?;
    let sharpener = Sharpener::new(&cfg.settings, &[cfg.method])?;
    let sr = sharpener.run(cfg.method, &scene.pair, scene.reference.as_ref())?;
    save_raster(&sr, &cfg.out)?;
    let mut manifest = RunManifest::new("sharpen", cfg)?;
    manifest.inputs = vec![cfg.scene.clone()];
    manifest.outputs = vec![cfg.out.clone()];
    manifest.finish(started).write(&manifest_path_for(&cfg.out))
}

// ---- evaluate ----

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateCommand {
    /// Super-resolved raster.
    pub sr: PathBuf,
    /// Scene directory with a reference.
    pub scene: PathBuf,
    /// Metrics JSON; printed to stdout when unset.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sr: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg: EvaluateCommand = load_config(args.config.as_deref())?;
    set(&mut cfg.sr, args.sr);
    set(&mut cfg.scene, args.scene);
    if args.out.is_some() {
        cfg.out = args.out;
    }
    run_evaluate(&cfg)
}

pub fn run_evaluate(cfg: &EvaluateCommand) -> Result<()> {
    let started = Instant::now();
    let scene = load_scene(&cfg.scene)?;
    let triple = scene.triple()?;
    let sr = load_raster(&cfg.sr)?;
    let bicubic = bicubic_baseline(triple.pair())?;
    let metrics = evaluate_scene(&sr, triple.ref_hr(), &bicubic)?;
    let json = serde_json::to_vec_pretty(&metrics)?;
    match &cfg.out {
        Some(out) => {
            write_atomic(out, &json)?;
            let mut manifest = RunManifest::new("evaluate", cfg)?;
            manifest.inputs = vec![cfg.sr.clone(), cfg.scene.clone()];
            manifest.outputs = vec![out.clone()];
            manifest.finish(started).write(&manifest_path_for(out))?;
        }
        None => println!("{}", String::from_utf8_lossy(&json)),
    }
    Ok(())
}

// ---- benchmark ----

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replay the configuration recorded in a previous run's manifest.
    #[arg(long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub sif_model: Option<PathBuf>,
    #[arg(long)]
    pub sc_model: Option<PathBuf>,
    #[arg(long)]
    pub var_preset: Option<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub hann: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let mut cfg: BenchmarkConfig = match &args.manifest {
        Some(m) => RunManifest::read(m)?.config_for("benchmark")?,
        None => load_config(args.config.as_deref())?,
    };
    set(&mut cfg.data, args.data);
    set(&mut cfg.out, args.out);
    set(&mut cfg.methods, args.methods);
    if args.sif_model.is_some() {
        cfg.method.sif_model = args.sif_model;
    }
    if args.sc_model.is_some() {
        cfg.method.sc_model = args.sc_model;
    }
    set(&mut cfg.method.var_preset, args.var_preset);
    if args.sigma.is_some() {
        cfg.method.sigma_px = args.sigma;
    }
    cfg.hann |= args.hann;
    set(&mut cfg.jobs, args.jobs);
    run_benchmark_command(&cfg)
}

pub fn run_benchmark_command(cfg: &BenchmarkConfig) -> Result<()> {
    let started = Instant::now();
    let report = run_benchmark(cfg)?;
    let mut manifest = RunManifest::new("benchmark", cfg)?;
    manifest.inputs = vec![cfg.data.clone()];
    manifest.outputs = write_report(&report, &cfg.out)?;
    manifest.finish(started).write(&cfg.out.join(MANIFEST_FILE))
}

// ---- spectra ----

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectraCommand {
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub hann: bool,
}

#[derive(Debug, Args)]
pub struct SpectraArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rasters to analyse; each curve is named after its file stem.
    #[arg(long, num_args = 1..)]
    pub inputs: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub hann: bool,
}

pub fn spectra(args: SpectraArgs) -> Result<()> {
    let mut cfg: SpectraCommand = load_config(args.config.as_deref())?;
    set(&mut cfg.inputs, args.inputs);
    set(&mut cfg.out, args.out);
    cfg.hann |= args.hann;
    run_spectra(&cfg)
}

pub fn run_spectra(cfg: &SpectraCommand) -> Result<()> {
    let started = Instant::now();
    if cfg.inputs.is_empty() {
        return Err(usage("no input rasters given"));
    }
    if cfg.out.as_os_str().is_empty() {
        return Err(usage("no output path given"));
    }
    let mut curves = Vec::new();
    for path in &cfg.inputs {
        let grid = load_raster(path)?;
        let spectrum = radial_spectrum_windowed(&center_square(&grid)?, cfg.hann)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        curves.push((name, attenuation_spectrum(&spectrum)?));
    }
    write_spectra_csv(&curves, &cfg.out)?;
    let mut manifest = RunManifest::new("spectra", cfg)?;
    manifest.inputs = cfg.inputs.clone();
    manifest.outputs = vec![cfg.out.clone()];
    manifest.finish(started).write(&manifest_path_for(&cfg.out))
}
