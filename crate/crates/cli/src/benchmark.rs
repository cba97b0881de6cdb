//! Multi-method evaluation over a scene directory: a per-scene metrics
//! table with mean and standard-deviation rows, and mean attenuation spectra.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sifsr_core::baselines::{atprk_sharpen_with, bicubic_baseline, tsharp_sharpen, AtprkConfig};
use sifsr_core::linops::default_mtf_sigma;
use sifsr_core::metrics::{
    attenuation_spectrum, center_square, evaluate_scene, mean_attenuation, radial_spectrum_windowed,
    write_spectra_csv, AttenuationSpectrum, SceneMetrics,
};
use sifsr_core::objective::SifConfig;
use sifsr_core::raster::{write_atomic, Grid2D, NormStats, ScenePair};
use sifsr_core::unet::{infer, UNet};
use sifsr_core::varsolve::{solve_direct, SolveConfig};

use crate::dataset::{load_dataset, Scene};
use crate::exit::usage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bicubic,
    Tsharp,
    Atprk,
    SifVar,
    SifNet,
    ScNet,
    /// The reference itself, for checking the harness.
    Reference,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Bicubic,
        Method::Tsharp,
        Method::Atprk,
        Method::SifVar,
        Method::SifNet,
        Method::ScNet,
        Method::Reference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bicubic => "bicubic",
            Method::Tsharp => "tsharp",
            Method::Atprk => "atprk",
            Method::SifVar => "sif-var",
            Method::SifNet => "sif-net",
            Method::ScNet => "sc-net",
            Method::Reference => "reference",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method '{s}' (expected one of {})", names.join(", "))
            })
    }
}

/// Settings shared by every sharpening method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    /// Checkpoint of a network trained in `sif1` or `sif2` mode.
    pub sif_model: Option<PathBuf>,
    /// Checkpoint of a network trained in `sc` mode.
    pub sc_model: Option<PathBuf>,
    /// Objective preset for the direct solver.
    pub var_preset: String,
    pub solve: SolveConfig,
    /// MTF width in fine pixels; `r/2` when unset.
    pub sigma_px: Option<f64>,
    pub atprk: AtprkConfig,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            sif_model: None,
            sc_model: None,
            var_preset: "sif1".into(),
            solve: SolveConfig::default(),
            sigma_px: None,
            atprk: AtprkConfig::default(),
        }
    }
}

/// Loaded models and settings for running methods on scenes.
pub struct Sharpener {
    cfg: MethodConfig,
    sif_net: Option<(UNet, NormStats)>,
    sc_net: Option<(UNet, NormStats)>,
}

fn load_model(path: &Path, want_sc: bool) -> Result<(UNet, NormStats)> {
    let (net, stats, mode) =
        UNet::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let is_sc = mode == "sc";
    if is_sc != want_sc {
        return Err(usage(format!(
            "checkpoint {} was trained in '{mode}' mode",
            path.display()
        )));
    }
    Ok((net, stats))
}

impl Sharpener {
    /// Loads whatever checkpoints `methods` need.
    pub fn new(cfg: &MethodConfig, methods: &[Method]) -> Result<Self> {
        let need = |m: Method| methods.contains(&m);
        let sif_net = if need(Method::SifNet) {
            let path = cfg
                .sif_model
                .as_ref()
                .ok_or_else(|| usage("method sif-net needs a sif_model checkpoint"))?;
            Some(load_model(path, false)?)
        } else {
            None
        };
        let sc_net = if need(Method::ScNet) {
            let path = cfg
                .sc_model
                .as_ref()
                .ok_or_else(|| usage("method sc-net needs an sc_model checkpoint"))?;
            Some(load_model(path, true)?)
        } else {
            None
        };
        if need(Method::SifVar) {
            SifConfig::preset(&cfg.var_preset, 2)?;
            cfg.solve.validate()?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            sif_net,
            sc_net,
        })
    }

    fn sigma(&self, pair: &ScenePair) -> f64 {
        self.cfg
            .sigma_px
            .unwrap_or_else(|| default_mtf_sigma(pair.scale_factor()))
    }

    pub fn run(&self, method: Method, pair: &ScenePair, reference: Option<&Grid2D>) -> Result<Grid2D> {
        let sigma = self.sigma(pair);
        let out = match method {
            Method::Bicubic => bicubic_baseline(pair)?,
            Method::Tsharp => tsharp_sharpen(pair, sigma)?,
            Method::Atprk => atprk_sharpen_with(pair, sigma, &self.cfg.atprk)?,
            Method::SifVar => {
                let mut sif = SifConfig::preset(&self.cfg.var_preset, pair.scale_factor())?;
                sif.mtf_sigma_px = sigma;
                let stats = NormStats::from_pairs([pair])?;
                solve_direct(pair, &stats, &sif, &self.cfg.solve)?.image
            }
            Method::SifNet => {
                let (net, stats) = self.sif_net.as_ref().ok_or_else(|| usage("sif-net model not loaded"))?;
                infer(net, pair, stats)?
            }
            Method::ScNet => {
                let (net, stats) = self.sc_net.as_ref().ok_or_else(|| usage("sc-net model not loaded"))?;
                infer(net, pair, stats)?
            }
            Method::Reference => reference
                .cloned()
                .ok_or_else(|| sifsr_core::Error::InvalidInput("scene has no reference".into()))?,
        };
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub methods: Vec<Method>,
    #[serde(flatten)]
    pub method: MethodConfig,
    /// Taper images with a Hann window before the transform.
    pub hann: bool,
    /// Scene-level worker threads; 0 picks the number of cores.
    pub jobs: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("benchmark"),
            methods: vec![Method::Bicubic, Method::Tsharp, Method::Atprk],
            method: MethodConfig::default(),
            hann: false,
            jobs: 1,
        }
    }
}

pub const TABLE_COLUMNS: [&str; 9] = [
    "method", "row", "RMSE", "RMSE75-100", "SSIM", "LPIPS", "FRR", "FRO", "RMSE_F",
];

/// One table row; `None` cells are written empty.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub row: String,
    pub values: [Option<f64>; 6],
}

impl TableRow {
    fn from_metrics(method: Method, scene: &str, m: &SceneMetrics) -> Self {
        Self {
            method: method.name().into(),
            row: scene.into(),
            values: [Some(m.rmse), Some(m.rmse_q75), Some(m.ssim), m.frr, m.fro, m.rmse_f],
        }
    }

    pub fn rmse(&self) -> Option<f64> {
        self.values[0]
    }
    pub fn ssim(&self) -> Option<f64> {
        self.values[2]
    }
    pub fn frr(&self) -> Option<f64> {
        self.values[3]
    }
    pub fn fro(&self) -> Option<f64> {
        self.values[4]
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub rows: Vec<TableRow>,
    pub spectra: Vec<(String, AttenuationSpectrum)>,
}

impl BenchmarkReport {
    pub fn row(&self, method: Method, row: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.method == method.name() && r.row == row)
    }

    pub fn spectrum(&self, name: &str) -> Option<&AttenuationSpectrum> {
        self.spectra.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

struct SceneResult {
    id: String,
    metrics: Vec<(Method, SceneMetrics)>,
    spectra: Vec<Option<AttenuationSpectrum>>,
    reference: Option<AttenuationSpectrum>,
    ndvi: Option<AttenuationSpectrum>,
}

fn spectrum(g: &Grid2D, hann: bool) -> Option<AttenuationSpectrum> {
    let sq = center_square(g).ok()?;
    attenuation_spectrum(&radial_spectrum_windowed(&sq, hann).ok()?).ok()
}

fn run_scene(scene: &Scene, methods: &[Method], sharpener: &Sharpener, hann: bool) -> Result<SceneResult> {
    let reference = scene
        .reference
        .as_ref()
        .ok_or_else(|| sifsr_core::Error::InvalidInput(format!("scene {} has no reference raster", scene.id)))?;
    let bicubic = bicubic_baseline(&scene.pair)?;
    let mut metrics = Vec::new();
    let mut spectra = Vec::new();
    for &m in methods {
        let sr = sharpener
            .run(m, &scene.pair, Some(reference))
            .with_context(|| format!("method {m} on scene {}", scene.id))?;
        metrics.push((m, evaluate_scene(&sr, reference, &bicubic)?));
        spectra.push(spectrum(&sr, hann));
    }
    Ok(SceneResult {
        id: scene.id.clone(),
        metrics,
        spectra,
        reference: spectrum(reference, hann),
        ndvi: spectrum(scene.pair.ndvi_hr(), hann),
    })
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

fn average_curves(curves: Vec<Option<AttenuationSpectrum>>) -> Option<AttenuationSpectrum> {
    let curves: Vec<AttenuationSpectrum> = curves.into_iter().flatten().collect();
    let len = curves.first()?.db.len();
    let same: Vec<AttenuationSpectrum> = curves.into_iter().filter(|c| c.db.len() == len).collect();
    mean_attenuation(&same).ok()
}

/// Runs every method on every scene of `scenes`.
pub fn run_benchmark_on(scenes: &[Scene], cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if cfg.methods.is_empty() {
        return Err(usage("no methods selected"));
    }
    let sharpener = Sharpener::new(&cfg.method, &cfg.methods)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("starting worker pool")?;
    let results: Vec<SceneResult> = pool.install(|| {
        scenes
            .par_iter()
            .map(|s| run_scene(s, &cfg.methods, &sharpener, cfg.hann))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::new();
    let mut spectra = Vec::new();
    for (k, &m) in cfg.methods.iter().enumerate() {
        let per_scene: Vec<TableRow> = results
            .iter()
            .map(|r| TableRow::from_metrics(m, &r.id, &r.metrics[k].1))
            .collect();
        let mut mean = [None; 6];
        let mut std = [None; 6];
        for c in 0..6 {
            let vals: Vec<f64> = per_scene.iter().filter_map(|r| r.values[c]).collect();
            (mean[c], std[c]) = mean_std(&vals);
        }
        rows.extend(per_scene);
        for (label, values) in [("mean", mean), ("std", std)] {
            rows.push(TableRow {
                method: m.name().into(),
                row: label.into(),
                values,
            });
        }
        if let Some(c) = average_curves(results.iter().map(|r| r.spectra[k].clone()).collect()) {
            spectra.push((m.name().to_string(), c));
        }
    }
    if !cfg.methods.contains(&Method::Reference) {
        if let Some(c) = average_curves(results.iter().map(|r| r.reference.clone()).collect()) {
            spectra.push(("reference".to_string(), c));
        }
    }
    if let Some(c) = average_curves(results.iter().map(|r| r.ndvi.clone()).collect()) {
        spectra.push(("ndvi".to_string(), c));
    }
    Ok(BenchmarkReport { rows, spectra })
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let scenes = load_dataset(&cfg.data)?;
    run_benchmark_on(&scenes, cfg)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Serializes the metrics table (LPIPS is always empty).
pub fn table_csv(rows: &[TableRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_COLUMNS)?;
    for r in rows {
        let v = &r.values;
        w.write_record([
            r.method.clone(),
            r.row.clone(),
            cell(v[0]),
            cell(v[1]),
            cell(v[2]),
            String::new(),
            cell(v[3]),
            cell(v[4]),
            cell(v[5]),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub const TABLE_FILE: &str = "benchmark.csv";
pub const SPECTRA_FILE: &str = "spectra.csv";

/// Writes `benchmark.csv` and `spectra.csv` under `out`.
pub fn write_report(report: &BenchmarkReport, out: &Path) -> Result<Vec<PathBuf>> {
    let table = out.join(TABLE_FILE);
    write_atomic(&table, &table_csv(&report.rows)?)?;
    let spectra = out.join(SPECTRA_FILE);
    write_spectra_csv(&report.spectra, &spectra)?;
    Ok(vec![table, spectra])
}
