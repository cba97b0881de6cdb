//! Image-quality and spectral metrics for super-resolved temperature fields.

use std::path::Path;

use ndarray::{s, Array2};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{fft2, signed_freq};
use crate::raster::{write_atomic, Grid2D};

fn check_same(a: &Grid2D, b: &Grid2D) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Root mean squared difference over jointly valid pixels.
pub fn rmse(sr: &Grid2D, reference: &Grid2D) -> Result<f64> {
    check_same(sr, reference)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((a, b), (ma, mb)) in sr
        .values()
        .iter()
        .zip(reference.values().iter())
        .zip(sr.mask().iter().zip(reference.mask().iter()))
    {
        if *ma && *mb {
            sum += (a - b).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no jointly valid pixels".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Sobel-style gradient magnitude: a `[1,2,1]/4` smoothing across the
/// derivative direction and a central difference along it, one-sided at the
/// border so that a linear ramp has the same gradient everywhere. Pixels
/// whose stencil touches a masked pixel come out NaN.
pub fn gradient_magnitude(grid: &Grid2D) -> Array2<f64> {
    let v = grid.to_nan_array();
    let (h, w) = v.dim();
    let deriv = |a: &Array2<f64>, axis_x: bool| -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(y, x)| {
            let (i, n) = if axis_x { (x, w) } else { (y, h) };
            if n < 2 {
                return 0.0;
            }
            let at = |k: usize| if axis_x { a[[y, k]] } else { a[[k, x]] };
            if i == 0 {
                at(1) - at(0)
            } else if i == n - 1 {
                at(n - 1) - at(n - 2)
            } else {
                0.5 * (at(i + 1) - at(i - 1))
            }
        })
    };
    let smooth = |a: &Array2<f64>, axis_x: bool| -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(y, x)| {
            let (i, n) = if axis_x { (x, w) } else { (y, h) };
            let at = |k: usize| if axis_x { a[[y, k]] } else { a[[k, x]] };
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            0.25 * at(lo) + 0.5 * at(i) + 0.25 * at(hi)
        })
    };
    let gx = smooth(&deriv(&v, true), false);
    let gy = smooth(&deriv(&v, false), true);
    Array2::from_shape_fn((h, w), |p| gx[p].hypot(gy[p]))
}

/// Linear-interpolation percentile of unsorted values, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// RMSE over the pixels whose reference gradient magnitude is in the top
/// quartile (at or above the 75th percentile).
pub fn rmse_q75(sr: &Grid2D, reference: &Grid2D) -> Result<f64> {
    check_same(sr, reference)?;
    let g = gradient_magnitude(reference);
    let usable = |p: (usize, usize)| sr.mask()[p] && reference.mask()[p] && g[p].is_finite();
    let grads: Vec<f64> = g
        .indexed_iter()
        .filter(|(p, _)| usable(*p))
        .map(|(_, v)| *v)
        .collect();
    let threshold =
        percentile(&grads, 0.75).ok_or_else(|| Error::Empty("no jointly valid pixels".into()))?;
    let scale = grads.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cut = threshold - 1e-12 * scale;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, gv) in g.indexed_iter() {
        if usable(p) && *gv >= cut {
            sum += (sr.values()[p] - reference.values()[p]).powi(2);
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Mean SSIM over every fully valid `window`×`window` placement. The
/// dynamic range is taken jointly over both images; the structure constant
/// is half the contrast constant.
pub fn ssim_mean(sr: &Grid2D, reference: &Grid2D, cfg: &SsimConfig) -> Result<f64> {
    check_same(sr, reference)?;
    let k = cfg.window;
    if k == 0 || k % 2 == 0 {
        return Err(Error::Config(format!("SSIM window {k} must be odd")));
    }
    let (h, w) = sr.dim();
    if h < k || w < k {
        return Err(Error::InvalidInput(format!(
            "{h}x{w} image is smaller than the {k}x{k} window"
        )));
    }
    let joint = &sr.mask() & &reference.mask();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (p, &m) in joint.indexed_iter() {
        if m {
            for v in [sr.values()[p], reference.values()[p]] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if lo > hi {
        return Err(Error::Empty("no jointly valid pixels".into()));
    }
    let range = hi - lo;
    let c1 = (cfg.k1 * range).powi(2);
    let c2 = (cfg.k2 * range).powi(2);
    let c3 = c2 / 2.0;
    let n = (k * k) as f64;
    let (x, y) = (sr.values(), reference.values());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - k {
        for j in 0..=w - k {
            let win = s![i..i + k, j..j + k];
            if !joint.slice(win).iter().all(|&m| m) {
                continue;
            }
            if range == 0.0 {
                total += 1.0;
                count += 1;
                continue;
            }
            let (xw, yw) = (x.slice(win), y.slice(win));
            let mx = xw.sum() / n;
            let my = yw.sum() / n;
            let mut vx = 0.0;
            let mut vy = 0.0;
            let mut cxy = 0.0;
            for (a, b) in xw.iter().zip(yw.iter()) {
                let (da, db) = (a - mx, b - my);
                vx += da * da;
                vy += db * db;
                cxy += da * db;
            }
            let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
            let sxy = (vx * vy).sqrt();
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let c = (2.0 * sxy + c2) / (vx + vy + c2);
            let st = (cxy + c3) / (sxy + c3);
            total += l * c * st;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no fully valid SSIM window".into()));
    }
    Ok(total / count as f64)
}

/// Radially averaged Fourier magnitude of a square image.
///
/// Ring `k` collects the frequencies whose radius, in frequency samples,
/// lies in `[k, k+1)`; ring 0 is the DC term alone. Corner frequencies
/// beyond the Nyquist circle form the outermost rings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialSpectrum {
    /// Inner radius of each ring in cycles per pixel.
    pub nu: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub counts: Vec<usize>,
    pub pixel_size: f64,
}

/// Largest centered square crop.
pub fn center_square(grid: &Grid2D) -> Result<Grid2D> {
    let (h, w) = grid.dim();
    let n = h.min(w);
    grid.crop((h - n) / 2, (w - n) / 2, n, n)
}

pub fn radial_spectrum(image: &Grid2D) -> Result<RadialSpectrum> {
    radial_spectrum_windowed(image, false)
}

/// [`radial_spectrum`] with an optional separable Hann taper.
pub fn radial_spectrum_windowed(image: &Grid2D, hann: bool) -> Result<RadialSpectrum> {
    if !image.is_fully_valid() {
        return Err(Error::InvalidInput(
            "spectra need fully valid images".into(),
        ));
    }
    let (h, w) = image.dim();
    if h != w || h == 0 {
        return Err(Error::Shape(format!("spectra need a square image, got {h}x{w}")));
    }
    let n = h;
    let taper: Vec<f64> = (0..n)
        .map(|i| {
            if hann && n > 1 {
                0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos()
            } else {
                1.0
            }
        })
        .collect();
    let mut spec =
        Array2::from_shape_fn((n, n), |(y, x)| Complex64::new(image.values()[[y, x]] * taper[y] * taper[x], 0.0));
    fft2(&mut spec);
    let half = n / 2;
    let max_ring = ring_index(n, half, half);
    let mut sums = vec![0.0; max_ring + 1];
    let mut counts = vec![0usize; max_ring + 1];
    for ((y, x), v) in spec.indexed_iter() {
        let k = ring_index(n, y, x);
        sums[k] += v.norm();
        counts[k] += 1;
    }
    let magnitude = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(RadialSpectrum {
        nu: (0..=max_ring).map(|k| k as f64 / n as f64).collect(),
        magnitude,
        counts,
        pixel_size: image.pixel_size(),
    })
}

fn ring_index(n: usize, y: usize, x: usize) -> usize {
    let fy = signed_freq(y, n);
    let fx = signed_freq(x, n);
    (fy * fy + fx * fx).sqrt().floor() as usize
}

/// Radial spectrum in dB relative to its DC value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttenuationSpectrum {
    pub nu: Vec<f64>,
    pub db: Vec<f64>,
    pub counts: Vec<usize>,
    pub pixel_size: f64,
}

impl AttenuationSpectrum {
    /// Ring frequencies in cycles per meter.
    pub fn nu_per_m(&self) -> Vec<f64> {
        self.nu.iter().map(|v| v / self.pixel_size).collect()
    }
}

/// Rings with no energy are floored 150 dB below DC.
pub const ATTENUATION_FLOOR: f64 = 1e-15;

pub fn attenuation_spectrum(spectrum: &RadialSpectrum) -> Result<AttenuationSpectrum> {
    let f0 = *spectrum
        .magnitude
        .first()
        .ok_or_else(|| Error::Empty("empty spectrum".into()))?;
    if !(f0 > 0.0) {
        return Err(Error::Degenerate("spectrum has zero DC component".into()));
    }
    let floor = f0 * ATTENUATION_FLOOR;
    let db = spectrum
        .magnitude
        .iter()
        .map(|&f| 10.0 * (f.max(floor).log10() - f0.log10()))
        .collect();
    Ok(AttenuationSpectrum {
        nu: spectrum.nu.clone(),
        db,
        counts: spectrum.counts.clone(),
        pixel_size: spectrum.pixel_size,
    })
}

/// Attenuation spectrum of a raster, center-cropped to a square.
pub fn image_attenuation(image: &Grid2D) -> Result<AttenuationSpectrum> {
    attenuation_spectrum(&radial_spectrum(&center_square(image)?)?)
}

fn rings_excluding_dc(curves: &[&AttenuationSpectrum]) -> Result<Vec<Vec<f64>>> {
    let len = curves[0].db.len();
    if curves.iter().any(|c| c.db.len() != len) {
        return Err(Error::Shape("attenuation spectra have different ring grids".into()));
    }
    if len < 2 {
        return Err(Error::Empty("no rings beyond DC".into()));
    }
    Ok(curves.iter().map(|c| c.db[1..].to_vec()).collect())
}

/// RMSE between two attenuation curves over the rings beyond DC.
pub fn rmse_attenuation(a: &AttenuationSpectrum, b: &AttenuationSpectrum) -> Result<f64> {
    let c = rings_excluding_dc(&[a, b])?;
    let n = c[0].len() as f64;
    let s: f64 = c[0].iter().zip(&c[1]).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((s / n).sqrt())
}

fn gap(c: &[Vec<f64>]) -> Result<f64> {
    let den: f64 = c[1].iter().zip(&c[2]).map(|(r, b)| (r - b).max(0.0)).sum();
    if den > 0.0 {
        Ok(den)
    } else {
        Err(Error::Degenerate(
            "reference spectrum never exceeds the bicubic one".into(),
        ))
    }
}

/// Frequency restoration rate: the share of the bicubic-to-reference
/// spectral deficit recovered, each ring's credit capped at its deficit.
pub fn frr(
    sr: &AttenuationSpectrum,
    reference: &AttenuationSpectrum,
    bicubic: &AttenuationSpectrum,
) -> Result<f64> {
    let c = rings_excluding_dc(&[sr, reference, bicubic])?;
    let den = gap(&c)?;
    let num: f64 = c[0]
        .iter()
        .zip(&c[1])
        .zip(&c[2])
        .map(|((s, r), b)| (s - b).clamp(0.0, (r - b).max(0.0)))
        .sum();
    Ok(num / den)
}

/// Frequency restoration overshoot: spectral excess above both the
/// reference and the bicubic curve, relative to the same deficit.
pub fn fro(
    sr: &AttenuationSpectrum,
    reference: &AttenuationSpectrum,
    bicubic: &AttenuationSpectrum,
) -> Result<f64> {
    let c = rings_excluding_dc(&[sr, reference, bicubic])?;
    let den = gap(&c)?;
    let num: f64 = c[0]
        .iter()
        .zip(&c[1])
        .zip(&c[2])
        .map(|((s, r), b)| (s - r.max(*b)).max(0.0))
        .sum();
    Ok(num / den)
}

/// Ring-wise mean of several curves on one grid.
pub fn mean_attenuation(curves: &[AttenuationSpectrum]) -> Result<AttenuationSpectrum> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Empty("no spectra to average".into()))?;
    if curves.iter().any(|c| c.db.len() != first.db.len()) {
        return Err(Error::Shape("attenuation spectra have different ring grids".into()));
    }
    let n = curves.len() as f64;
    let db = (0..first.db.len())
        .map(|k| curves.iter().map(|c| c.db[k]).sum::<f64>() / n)
        .collect();
    Ok(AttenuationSpectrum {
        db,
        ..first.clone()
    })
}

/// Every metric for one super-resolved scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub rmse: f64,
    pub rmse_q75: f64,
    pub ssim: f64,
    pub frr: Option<f64>,
    pub fro: Option<f64>,
    pub rmse_f: Option<f64>,
}

/// Scores `sr` against `reference`, with `bicubic` as the spectral baseline.
/// Spectral scores are `None` when a spectrum is undefined (masked pixels,
/// zero DC, or a reference no sharper than bicubic).
pub fn evaluate_scene(sr: &Grid2D, reference: &Grid2D, bicubic: &Grid2D) -> Result<SceneMetrics> {
    let spectral = (|| -> Result<(f64, f64, f64)> {
        let a_sr = image_attenuation(sr)?;
        let a_ref = image_attenuation(reference)?;
        let a_bic = image_attenuation(bicubic)?;
        Ok((
            frr(&a_sr, &a_ref, &a_bic)?,
            fro(&a_sr, &a_ref, &a_bic)?,
            rmse_attenuation(&a_sr, &a_ref)?,
        ))
    })()
    .ok();
    Ok(SceneMetrics {
        rmse: rmse(sr, reference)?,
        rmse_q75: rmse_q75(sr, reference)?,
        ssim: ssim_mean(sr, reference, &SsimConfig::default())?,
        frr: spectral.map(|s| s.0),
        fro: spectral.map(|s| s.1),
        rmse_f: spectral.map(|s| s.2),
    })
}

/// Long-format spectra table: one row per method and ring.
pub fn write_spectra_csv(curves: &[(String, AttenuationSpectrum)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["method", "nu_cycles_per_px", "nu_per_m", "dB"])
        .map_err(io)?;
    for (name, c) in curves {
        for ((nu, nu_m), db) in c.nu.iter().zip(c.nu_per_m()).zip(&c.db) {
            w.write_record([
                name.clone(),
                format!("{nu:.6}"),
                format!("{nu_m:.9}"),
                format!("{db:.6}"),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}
