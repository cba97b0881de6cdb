//! Synthetic scenes with known ground truth, patch slicing and reference
//! degradation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{fft2, ifft2, signed_freq};
use crate::linops::{bicubic_resize, default_mtf_sigma, gaussian_blur, mtf_degrade, GaussianKernel};
use crate::raster::{EvalTriple, Grid2D, ScenePair};

/// Recipe for one synthetic scene.
///
/// NDVI is a fractal field whose power spectrum falls as `|k|^spectral_slope`,
/// rescaled to `[0, 1]`. Temperature is
/// `base + trend + coarse_coupling·low(NDVI) + gamma_true·high(NDVI) + noise`
/// where `low` is a Gaussian blur of width `scale_factor` fine pixels and
/// `high` its complement. Different couplings at the two scales make any
/// regression fitted on the coarse grid mis-scale the fine texture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub hr_size: usize,
    pub scale_factor: usize,
    pub pixel_size_m: f64,
    pub spectral_slope: f64,
    /// Kelvin per NDVI unit for the fine-scale component.
    pub gamma_true: f64,
    /// Kelvin per NDVI unit for the large-scale component.
    pub coarse_coupling: f64,
    pub base_temperature: f64,
    /// Peak amplitude of the smooth trend, Kelvin.
    pub trend_amplitude: f64,
    pub noise_std: f64,
    /// Offset added to the reference only, Kelvin.
    pub reference_bias: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            hr_size: 128,
            scale_factor: 4,
            pixel_size_m: 250.0,
            spectral_slope: -2.0,
            gamma_true: -10.0,
            coarse_coupling: -20.0,
            base_temperature: 300.0,
            trend_amplitude: 3.0,
            noise_std: 0.1,
            reference_bias: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_factor == 0 || self.hr_size == 0 || self.hr_size % self.scale_factor != 0 {
            return Err(Error::Config(format!(
                "hr_size {} must be a positive multiple of scale_factor {}",
                self.hr_size, self.scale_factor
            )));
        }
        if self.hr_size / self.scale_factor < 2 {
            return Err(Error::Config("low-resolution grid must be at least 2x2".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if !(self.pixel_size_m > 0.0) || !self.pixel_size_m.is_finite() {
            return Err(Error::Config("pixel_size_m must be positive".into()));
        }
        let finite = [
            self.spectral_slope,
            self.gamma_true,
            self.coarse_coupling,
            self.base_temperature,
            self.trend_amplitude,
            self.reference_bias,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("synthetic parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Gaussian white noise shaped to a power-law spectrum, zero mean.
pub fn fractal_field(size: usize, spectral_slope: f64, rng: &mut impl Rng) -> Array2<f64> {
    let mut spec =
        Array2::from_shape_fn((size, size), |_| Complex64::new(rng.sample(StandardNormal), 0.0));
    fft2(&mut spec);
    let amp_exp = spectral_slope / 2.0;
    for ((ky, kx), v) in spec.indexed_iter_mut() {
        let fy = signed_freq(ky, size);
        let fx = signed_freq(kx, size);
        let k = (fy * fy + fx * fx).sqrt();
        *v *= if k == 0.0 { 0.0 } else { k.powf(amp_exp) };
    }
    ifft2(&mut spec);
    spec.mapv(|c| c.re)
}

/// Sum of three low-frequency plane waves, peak-normalized to `amplitude`.
fn smooth_trend(size: usize, amplitude: f64, rng: &mut impl Rng) -> Array2<f64> {
    let n = size as f64;
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let fy = rng.random_range(-1.5..1.5) / n;
            let fx = rng.random_range(-1.5..1.5) / n;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (fy, fx, phase)
        })
        .collect();
    let field = Array2::from_shape_fn((size, size), |(y, x)| {
        waves
            .iter()
            .map(|(fy, fx, ph)| (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) + ph).cos())
            .sum::<f64>()
    });
    let peak = field.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        field * (amplitude / peak)
    } else {
        field
    }
}

/// Generates a scene: NDVI and reference at fine resolution, LST observed
/// through the MTF degradation.
pub fn synth_scene(cfg: &SynthConfig) -> Result<EvalTriple> {
    cfg.validate()?;
    let n = cfg.hr_size;
    let r = cfg.scale_factor;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let raw = fractal_field(n, cfg.spectral_slope, &mut rng);
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let ndvi_values = raw.mapv(|v| (v - lo) / span);
    let ndvi = Grid2D::new(ndvi_values, cfg.pixel_size_m)?;

    let split = GaussianKernel::with_default_radius(r as f64)?;
    let low = gaussian_blur(&ndvi, &split)?;
    let mean = ndvi.mean().unwrap_or(0.0);
    let trend = smooth_trend(n, cfg.trend_amplitude, &mut rng);
    let mut t = Array2::zeros((n, n));
    for ((y, x), v) in t.indexed_iter_mut() {
        let nv = ndvi.values()[[y, x]];
        let lv = low.values()[[y, x]];
        let noise: f64 = rng.sample(StandardNormal);
        *v = cfg.base_temperature
            + trend[[y, x]]
            + cfg.coarse_coupling * (lv - mean)
            + cfg.gamma_true * (nv - lv)
            + cfg.noise_std * noise;
    }
    let t_hr = Grid2D::new(t, cfg.pixel_size_m)?.with_units("K");
    let lst_lr = mtf_degrade(&t_hr, r, default_mtf_sigma(r))?;
    let reference = t_hr.map_valid(|v| v + cfg.reference_bias)?;
    EvalTriple::new(ScenePair::new(lst_lr, ndvi, r)?, reference)
}

/// A patch and its offset on the low-resolution grid.
#[derive(Clone, Debug)]
pub struct Patch<T> {
    pub lr_row: usize,
    pub lr_col: usize,
    pub item: T,
}

fn crop_pair(pair: &ScenePair, row: usize, col: usize, size: usize) -> Result<ScenePair> {
    let r = pair.scale_factor();
    ScenePair::new(
        pair.lst_lr().crop(row, col, size, size)?,
        pair.ndvi_hr().crop(row * r, col * r, size * r, size * r)?,
        r,
    )
}

fn patch_origins(lr_h: usize, lr_w: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    let (rows, cols) = if size == 0 { (0, 0) } else { (lr_h / size, lr_w / size) };
    (0..rows).flat_map(move |i| (0..cols).map(move |j| (i * size, j * size)))
}

/// Non-overlapping aligned patches of `lr_patch` coarse pixels (and
/// `r·lr_patch` fine pixels), in row-major order.
pub fn slice_patches(pair: &ScenePair, lr_patch: usize, reject_masked: bool) -> Result<Vec<Patch<ScenePair>>> {
    let (h, w) = pair.lst_lr().dim();
    let mut out = Vec::new();
    for (row, col) in patch_origins(h, w, lr_patch) {
        let p = crop_pair(pair, row, col, lr_patch)?;
        if reject_masked && (!p.lst_lr().is_fully_valid() || !p.ndvi_hr().is_fully_valid()) {
            continue;
        }
        out.push(Patch {
            lr_row: row,
            lr_col: col,
            item: p,
        });
    }
    Ok(out)
}

/// [`slice_patches`] for scenes that carry a reference.
pub fn slice_triples(
    triple: &EvalTriple,
    lr_patch: usize,
    reject_masked: bool,
) -> Result<Vec<Patch<EvalTriple>>> {
    let pair = triple.pair();
    let r = pair.scale_factor();
    let (h, w) = pair.lst_lr().dim();
    let mut out = Vec::new();
    for (row, col) in patch_origins(h, w, lr_patch) {
        let p = crop_pair(pair, row, col, lr_patch)?;
        let reference = triple
            .ref_hr()
            .crop(row * r, col * r, lr_patch * r, lr_patch * r)?;
        if reject_masked
            && (!p.lst_lr().is_fully_valid()
                || !p.ndvi_hr().is_fully_valid()
                || !reference.is_fully_valid())
        {
            continue;
        }
        out.push(Patch {
            lr_row: row,
            lr_col: col,
            item: EvalTriple::new(p, reference)?,
        });
    }
    Ok(out)
}

/// Half-kernel width of the smoothing applied before changing a
/// reference's resolution, meters.
pub const REFERENCE_HALF_WIDTH_M: f64 = 250.0;

/// Smooths a fine reference and resamples it to `target_gsd_m`.
pub fn degrade_reference(reference: &Grid2D, target_gsd_m: f64) -> Result<Grid2D> {
    degrade_reference_with(reference, target_gsd_m, REFERENCE_HALF_WIDTH_M)
}

/// [`degrade_reference`] with an explicit half-kernel width in meters.
pub fn degrade_reference_with(reference: &Grid2D, target_gsd_m: f64, half_width_m: f64) -> Result<Grid2D> {
    if !(target_gsd_m > 0.0) || !target_gsd_m.is_finite() {
        return Err(Error::InvalidInput(format!("target GSD {target_gsd_m} must be positive")));
    }
    let ps = reference.pixel_size();
    let out_w = (reference.width() as f64 * ps / target_gsd_m).round() as usize;
    let out_h = (reference.height() as f64 * ps / target_gsd_m).round() as usize;
    let extent = reference.width().min(reference.height()) as f64 * ps;
    if target_gsd_m > extent || out_w == 0 || out_h == 0 {
        return Err(Error::InvalidInput(format!(
            "target GSD {target_gsd_m} m exceeds the image extent"
        )));
    }
    let kernel = GaussianKernel::from_half_width(half_width_m / ps)?;
    let smooth = gaussian_blur(reference, &kernel)?;
    let out = bicubic_resize(&smooth, out_w, out_h)?;
    out.with_pixel_size(target_gsd_m)
}
