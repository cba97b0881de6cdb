//! Fixed linear operators on 2-D fields, each paired with its exact adjoint.
//!
//! All operators use replicate (clamp-to-edge) boundaries. The array-level
//! functions work on fully valid fields; the [`Grid2D`]-level wrappers handle
//! masks by renormalizing over valid taps.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::raster::Grid2D;

/// Below this width a Gaussian is treated as a Dirac.
pub const MIN_SIGMA_PX: f64 = 0.3;

/// MTF width used for a factor-`r` degradation when none is configured.
pub fn default_mtf_sigma(r: usize) -> f64 {
    r as f64 / 2.0
}

/// Sampled isotropic Gaussian, normalized to unit sum after truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    sigma_px: f64,
    radius: usize,
    taps: Vec<f64>,
}

/// Builds a Gaussian kernel. `sigma_px < 0.3` yields the identity kernel.
pub fn gaussian_kernel(sigma_px: f64, radius: usize) -> Result<GaussianKernel> {
    if !(sigma_px >= 0.0) || !sigma_px.is_finite() {
        return Err(Error::InvalidInput(format!(
            "sigma must be non-negative, got {sigma_px}"
        )));
    }
    if sigma_px < MIN_SIGMA_PX {
        return Ok(GaussianKernel {
            sigma_px,
            radius: 0,
            taps: vec![1.0],
        });
    }
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(GaussianKernel {
        sigma_px,
        radius,
        taps: raw.into_iter().map(|v| v / total).collect(),
    })
}

impl GaussianKernel {
    /// Kernel truncated at `ceil(3σ)`.
    pub fn with_default_radius(sigma_px: f64) -> Result<Self> {
        let radius = if sigma_px.is_finite() && sigma_px > 0.0 {
            (3.0 * sigma_px).ceil() as usize
        } else {
            0
        };
        gaussian_kernel(sigma_px, radius)
    }

    /// Kernel whose truncation radius is `half_width_px` and σ half of it.
    pub fn from_half_width(half_width_px: f64) -> Result<Self> {
        if !(half_width_px >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "half width must be non-negative, got {half_width_px}"
            )));
        }
        gaussian_kernel(half_width_px / 2.0, half_width_px.ceil() as usize)
    }

    pub fn sigma_px(&self) -> f64 {
        self.sigma_px
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// One-dimensional taps; the 2-D kernel is their outer product.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn is_identity(&self) -> bool {
        self.radius == 0
    }

    /// The `(2·radius+1)²` weight grid.
    pub fn weights(&self) -> Array2<f64> {
        let n = self.taps.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.taps[i] * self.taps[j])
    }

    pub fn center_weight(&self) -> f64 {
        self.taps[self.radius] * self.taps[self.radius]
    }

    /// Separable replicate-boundary convolution.
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        if self.is_identity() {
            return x.to_owned();
        }
        let rows = map_rows(x, |src, dst| correlate_1d(src, &self.taps, dst));
        transpose_owned(map_rows(rows.t(), |src, dst| correlate_1d(src, &self.taps, dst)))
    }

    pub fn apply_adjoint(&self, g: ArrayView2<f64>) -> Array2<f64> {
        if self.is_identity() {
            return g.to_owned();
        }
        let cols = transpose_owned(map_rows(g.t(), |src, dst| {
            correlate_1d_adjoint(src, &self.taps, dst)
        }));
        map_rows(cols.view(), |src, dst| {
            correlate_1d_adjoint(src, &self.taps, dst)
        })
    }
}

fn transpose_owned(a: Array2<f64>) -> Array2<f64> {
    a.reversed_axes().as_standard_layout().into_owned()
}

/// Applies a row kernel `f(src_row, dst_row)` to every row, producing rows of
/// the same length.
fn map_rows(x: ArrayView2<f64>, f: impl Fn(&[f64], &mut [f64])) -> Array2<f64> {
    let (h, w) = x.dim();
    let mut out = Array2::zeros((h, w));
    let mut buf = vec![0.0; w];
    for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        for (b, &v) in buf.iter_mut().zip(src.iter()) {
            *b = v;
        }
        f(&buf, dst.as_slice_mut().expect("standard layout"));
    }
    out
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn correlate_1d(src: &[f64], taps: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let r = (taps.len() / 2) as isize;
    for (i, d) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &w) in taps.iter().enumerate() {
            acc += w * src[clamp_index(i as isize + k as isize - r, n)];
        }
        *d = acc;
    }
}

fn correlate_1d_adjoint(src: &[f64], taps: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let r = (taps.len() / 2) as isize;
    dst.iter_mut().for_each(|d| *d = 0.0);
    for (i, &g) in src.iter().enumerate() {
        for (k, &w) in taps.iter().enumerate() {
            dst[clamp_index(i as isize + k as isize - r, n)] += w * g;
        }
    }
}

fn check_odd(kernel: &ArrayView2<f64>) -> Result<(usize, usize)> {
    let (kh, kw) = kernel.dim();
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "kernel must have odd dimensions, got {kh}x{kw}"
        )));
    }
    Ok((kh / 2, kw / 2))
}

fn pad_replicate(x: ArrayView2<f64>, ry: usize, rx: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((h + 2 * ry, w + 2 * rx), |(i, j)| {
        x[(
            clamp_index(i as isize - ry as isize, h),
            clamp_index(j as isize - rx as isize, w),
        )]
    })
}

/// Adjoint of [`pad_replicate`]: folds border contributions back onto edge pixels.
fn fold_replicate(p: ArrayView2<f64>, ry: usize, rx: usize, h: usize, w: usize) -> Array2<f64> {
    let mut out = Array2::zeros((h, w));
    for ((i, j), &v) in p.indexed_iter() {
        let ti = clamp_index(i as isize - ry as isize, h);
        let tj = clamp_index(j as isize - rx as isize, w);
        out[(ti, tj)] += v;
    }
    out
}

/// Same-size correlation with replicate padding on a fully valid field.
pub fn correlate(x: ArrayView2<f64>, kernel: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (ry, rx) = check_odd(&kernel)?;
    let (h, w) = x.dim();
    let padded = pad_replicate(x, ry, rx);
    let mut out = Array2::zeros((h, w));
    for ((ki, kj), &wgt) in kernel.indexed_iter() {
        if wgt == 0.0 {
            continue;
        }
        for i in 0..h {
            let src = padded.row(i + ki);
            let src = &src.as_slice().expect("standard layout")[kj..kj + w];
            let mut dst = out.row_mut(i);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wgt * s;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`correlate`] with respect to its image argument.
pub fn correlate_adjoint(g: ArrayView2<f64>, kernel: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (ry, rx) = check_odd(&kernel)?;
    let (h, w) = g.dim();
    let mut padded = Array2::<f64>::zeros((h + 2 * ry, w + 2 * rx));
    for ((ki, kj), &wgt) in kernel.indexed_iter() {
        if wgt == 0.0 {
            continue;
        }
        for i in 0..h {
            let src = g.row(i);
            let mut dst = padded.row_mut(i + ki);
            let dst = &mut dst.as_slice_mut().expect("standard layout")[kj..kj + w];
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d += wgt * s;
            }
        }
    }
    Ok(fold_replicate(padded.view(), ry, rx, h, w))
}

/// Interpolation kernels for separable resampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    /// Keys cubic with a = −0.5.
    CatmullRom,
    Bilinear,
}

fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Sparse 1-D resampling matrix with pixel-center alignment and clamped taps.
#[derive(Clone, Debug)]
pub struct Resampler {
    in_len: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Resampler {
    pub fn new(in_len: usize, out_len: usize, interp: Interp) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let rows = (0..out_len)
            .map(|o| {
                let src = (o as f64 + 0.5) * scale - 0.5;
                let base = src.floor();
                let t = src - base;
                let base = base as isize;
                let taps: Vec<(isize, f64)> = match interp {
                    Interp::CatmullRom => vec![
                        (base - 1, catmull_rom(1.0 + t)),
                        (base, catmull_rom(t)),
                        (base + 1, catmull_rom(1.0 - t)),
                        (base + 2, catmull_rom(2.0 - t)),
                    ],
                    Interp::Bilinear => vec![(base, 1.0 - t), (base + 1, t)],
                };
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(4);
                for (i, w) in taps {
                    if w == 0.0 {
                        continue;
                    }
                    let i = clamp_index(i, in_len);
                    match merged.iter_mut().find(|(j, _)| *j == i) {
                        Some(entry) => entry.1 += w,
                        None => merged.push((i, w)),
                    }
                }
                merged
            })
            .collect();
        Self { in_len, rows }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.rows.len()
    }

    fn apply_row(&self, src: &[f64], dst: &mut [f64]) {
        for (d, taps) in dst.iter_mut().zip(&self.rows) {
            *d = taps.iter().map(|&(i, w)| w * src[i]).sum();
        }
    }

    fn adjoint_row(&self, src: &[f64], dst: &mut [f64]) {
        dst.iter_mut().for_each(|d| *d = 0.0);
        for (&g, taps) in src.iter().zip(&self.rows) {
            for &(i, w) in taps {
                dst[i] += w * g;
            }
        }
    }
}

/// Separable 2-D resampling between two fixed shapes.
#[derive(Clone, Debug)]
pub struct Resize2D {
    along_y: Resampler,
    along_x: Resampler,
}

impl Resize2D {
    /// `in_dim` and `out_dim` are `(height, width)`.
    pub fn new(in_dim: (usize, usize), out_dim: (usize, usize), interp: Interp) -> Self {
        Self {
            along_y: Resampler::new(in_dim.0, out_dim.0, interp),
            along_x: Resampler::new(in_dim.1, out_dim.1, interp),
        }
    }

    pub fn in_dim(&self) -> (usize, usize) {
        (self.along_y.in_len(), self.along_x.in_len())
    }

    pub fn out_dim(&self) -> (usize, usize) {
        (self.along_y.out_len(), self.along_x.out_len())
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let tmp = resample_rows(x, &self.along_x, false);
        transpose_owned(resample_rows(tmp.t(), &self.along_y, false))
    }

    pub fn apply_adjoint(&self, g: ArrayView2<f64>) -> Array2<f64> {
        let tmp = transpose_owned(resample_rows(g.t(), &self.along_y, true));
        resample_rows(tmp.view(), &self.along_x, true)
    }
}

fn resample_rows(x: ArrayView2<f64>, rs: &Resampler, adjoint: bool) -> Array2<f64> {
    let h = x.nrows();
    let out_w = if adjoint { rs.in_len() } else { rs.out_len() };
    let mut out = Array2::zeros((h, out_w));
    let mut buf = vec![0.0; x.ncols()];
    for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        for (b, &v) in buf.iter_mut().zip(src.iter()) {
            *b = v;
        }
        let dst = dst.as_slice_mut().expect("standard layout");
        if adjoint {
            rs.adjoint_row(&buf, dst);
        } else {
            rs.apply_row(&buf, dst);
        }
    }
    out
}

/// Catmull-Rom resize of a fully valid field to `(out_h, out_w)`.
pub fn bicubic_resize_array(x: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    Resize2D::new(x.dim(), (out_h, out_w), Interp::CatmullRom).apply(x)
}

/// The four directional 3×3 Sobel kernels: horizontal, vertical and the two diagonals.
pub fn sobel_kernels() -> [Array2<f64>; 4] {
    [
        ndarray::array![[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]],
        ndarray::array![[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]],
        ndarray::array![[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]],
        ndarray::array![[2.0, 1.0, 0.0], [1.0, 0.0, -1.0], [0.0, -1.0, -2.0]],
    ]
}

/// `x − K∗x` on a fully valid field.
pub fn highpass_array(x: ArrayView2<f64>, kernel: &GaussianKernel) -> Array2<f64> {
    &x - &kernel.apply(x)
}

pub fn highpass_adjoint_array(g: ArrayView2<f64>, kernel: &GaussianKernel) -> Array2<f64> {
    &g - &kernel.apply_adjoint(g)
}

/// The observation operator H: Gaussian MTF blur followed by bicubic
/// reduction by an integer factor.
#[derive(Clone, Debug)]
pub struct ObservationOp {
    kernel: GaussianKernel,
    factor: usize,
}

impl ObservationOp {
    pub fn new(factor: usize, sigma_px: f64) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidInput("factor must be positive".into()));
        }
        Ok(Self {
            kernel: GaussianKernel::with_default_radius(sigma_px)?,
            factor,
        })
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    fn resize_for(&self, (h, w): (usize, usize)) -> Result<Resize2D> {
        let r = self.factor;
        if h % r != 0 || w % r != 0 {
            return Err(Error::Shape(format!(
                "{h}x{w} field is not divisible by factor {r}"
            )));
        }
        Ok(Resize2D::new((h, w), (h / r, w / r), Interp::CatmullRom))
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let resize = self.resize_for(x.dim())?;
        Ok(resize.apply(self.kernel.apply(x).view()))
    }

    /// Maps a low-resolution field back to the `hr_dim` grid.
    pub fn apply_adjoint(&self, g: ArrayView2<f64>, hr_dim: (usize, usize)) -> Result<Array2<f64>> {
        let resize = self.resize_for(hr_dim)?;
        if g.dim() != resize.out_dim() {
            return Err(Error::Shape(format!(
                "adjoint input {:?} does not match {:?}",
                g.dim(),
                resize.out_dim()
            )));
        }
        Ok(self.kernel.apply_adjoint(resize.apply_adjoint(g).view()))
    }
}

// ---------------------------------------------------------------------------
// Grid-level wrappers

fn mask_f64(g: &Grid2D) -> Array2<f64> {
    g.mask().mapv(|m| if m { 1.0 } else { 0.0 })
}

/// Renormalized masked filtering: `num / den` where `den` is the filtered mask.
fn masked_ratio(template: &Grid2D, num: Array2<f64>, den: Array2<f64>, min_den: f64) -> Result<Grid2D> {
    let mask = den.mapv(|d| d > min_den);
    let mut values = num;
    Zip::from(&mut values).and(&den).for_each(|v, &d| {
        *v = if d > min_den { *v / d } else { 0.0 };
    });
    Ok(Grid2D::with_mask(values, mask, template.pixel_size())?.with_units(template.units()))
}

/// Replicate-padded correlation; masked pixels are excluded and the valid
/// weights renormalized (intended for non-negative kernels).
pub fn conv_replicate(grid: &Grid2D, kernel: ArrayView2<f64>) -> Result<Grid2D> {
    if grid.is_fully_valid() {
        return grid.with_values(correlate(grid.values(), kernel)?);
    }
    let m = mask_f64(grid);
    let num = correlate(grid.values(), kernel)?;
    let den = correlate(m.view(), kernel)?;
    masked_ratio(grid, num, den, 1e-12)
}

pub fn gaussian_blur(grid: &Grid2D, kernel: &GaussianKernel) -> Result<Grid2D> {
    if grid.is_fully_valid() {
        return grid.with_values(kernel.apply(grid.values()));
    }
    let m = mask_f64(grid);
    let num = kernel.apply(grid.values());
    let den = kernel.apply(m.view());
    masked_ratio(grid, num, den, 1e-12)
}

/// Catmull-Rom resize; output pixel size scales with the width ratio.
///
/// On masked inputs the cubic weights are renormalized over valid taps and
/// outputs whose valid weight falls below one half are masked.
pub fn bicubic_resize(grid: &Grid2D, out_w: usize, out_h: usize) -> Result<Grid2D> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidInput("output dimensions must be positive".into()));
    }
    let resize = Resize2D::new(grid.dim(), (out_h, out_w), Interp::CatmullRom);
    let pixel_size = grid.pixel_size() * grid.width() as f64 / out_w as f64;
    let template = grid.with_pixel_size(pixel_size)?;
    if grid.is_fully_valid() {
        let vals = resize.apply(grid.values());
        return Ok(Grid2D::new(vals, pixel_size)?.with_units(grid.units()));
    }
    let m = mask_f64(grid);
    let num = resize.apply(grid.values());
    let den = resize.apply(m.view());
    masked_ratio(&template, num, den, 0.5)
}

/// H applied to a raster: MTF blur then bicubic reduction by `r`.
pub fn mtf_degrade(hr: &Grid2D, r: usize, sigma_px: f64) -> Result<Grid2D> {
    if r == 0 || hr.width() % r != 0 || hr.height() % r != 0 {
        return Err(Error::Shape(format!(
            "{}x{} raster is not divisible by factor {r}",
            hr.height(),
            hr.width()
        )));
    }
    let kernel = GaussianKernel::with_default_radius(sigma_px)?;
    let blurred = gaussian_blur(hr, &kernel)?;
    bicubic_resize(&blurred, hr.width() / r, hr.height() / r)
}

/// Four directional Sobel responses. An output pixel is valid only when its
/// whole 3×3 neighbourhood is valid.
pub fn sobel_directional(grid: &Grid2D) -> Result<[Grid2D; 4]> {
    if grid.width() < 3 || grid.height() < 3 {
        return Err(Error::InvalidInput(format!(
            "Sobel needs at least 3x3 pixels, got {}x{}",
            grid.height(),
            grid.width()
        )));
    }
    let mask = if grid.is_fully_valid() {
        grid.mask().to_owned()
    } else {
        let invalid = grid.mask().mapv(|m| if m { 0.0 } else { 1.0 });
        let spread = correlate(invalid.view(), Array2::from_elem((3, 3), 1.0).view())?;
        spread.mapv(|v| v == 0.0)
    };
    let make = |k: &Array2<f64>| -> Result<Grid2D> {
        let vals = correlate(grid.values(), k.view())?;
        Ok(Grid2D::with_mask(vals, mask.clone(), grid.pixel_size())?)
    };
    let [k0, k1, k2, k3] = sobel_kernels();
    Ok([make(&k0)?, make(&k1)?, make(&k2)?, make(&k3)?])
}

/// `G(I) = I − K∗I` on a raster.
pub fn highpass(grid: &Grid2D, kernel: &GaussianKernel) -> Result<Grid2D> {
    let low = gaussian_blur(grid, kernel)?;
    let mut values = grid.values().to_owned();
    Zip::from(&mut values)
        .and(low.values())
        .for_each(|v, &l| *v -= l);
    let mask = Zip::from(grid.mask())
        .and(low.mask())
        .map_collect(|&a, &b| a && b);
    Ok(Grid2D::with_mask(values, mask, grid.pixel_size())?.with_units(grid.units()))
}

// ---------------------------------------------------------------------------
// Operator descriptors with forward/adjoint pairs

/// Names one of the fixed linear operators.
#[derive(Clone, Debug, PartialEq)]
pub enum OpDescriptor {
    GaussianConv { sigma_px: f64 },
    BicubicDown { factor: usize },
    BicubicUp { factor: usize },
    Sobel { direction: usize },
    Highpass { sigma_px: f64 },
    Observation { factor: usize, sigma_px: f64 },
}

impl fmt::Display for OpDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpDescriptor::GaussianConv { sigma_px } => write!(f, "gaussian_conv:{sigma_px}"),
            OpDescriptor::BicubicDown { factor } => write!(f, "bicubic_down:{factor}"),
            OpDescriptor::BicubicUp { factor } => write!(f, "bicubic_up:{factor}"),
            OpDescriptor::Sobel { direction } => write!(f, "sobel_{direction}"),
            OpDescriptor::Highpass { sigma_px } => write!(f, "highpass:{sigma_px}"),
            OpDescriptor::Observation { factor, sigma_px } => {
                write!(f, "observation:{factor}:{sigma_px}")
            }
        }
    }
}

impl FromStr for OpDescriptor {
    type Err = Error;

    /// Accepts `name[:param[:param]]`, e.g. `gaussian_conv:1.5`, `bicubic_down:4`,
    /// `sobel_2`, `highpass`, `observation:4:2`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownOperator(s.to_string());
        let mut parts = s.split(':');
        let name = parts.next().ok_or_else(unknown)?.trim();
        let params: Vec<&str> = parts.map(str::trim).collect();
        let float = |i: usize, default: f64| -> Result<f64> {
            params
                .get(i)
                .map_or(Ok(default), |p| p.parse::<f64>().map_err(|_| unknown()))
        };
        let int = |i: usize, default: usize| -> Result<usize> {
            params
                .get(i)
                .map_or(Ok(default), |p| p.parse::<usize>().map_err(|_| unknown()))
        };
        let desc = match name {
            "gaussian_conv" => OpDescriptor::GaussianConv {
                sigma_px: float(0, 2.0)?,
            },
            "bicubic_down" => OpDescriptor::BicubicDown { factor: int(0, 4)? },
            "bicubic_up" => OpDescriptor::BicubicUp { factor: int(0, 4)? },
            "highpass" => OpDescriptor::Highpass {
                sigma_px: float(0, 2.0)?,
            },
            "observation" => {
                let factor = int(0, 4)?;
                OpDescriptor::Observation {
                    factor,
                    sigma_px: float(1, default_mtf_sigma(factor))?,
                }
            }
            other => match other.strip_prefix("sobel_") {
                Some(k) => {
                    let direction = k.parse::<usize>().map_err(|_| unknown())?;
                    if direction > 3 {
                        return Err(unknown());
                    }
                    OpDescriptor::Sobel { direction }
                }
                None => return Err(unknown()),
            },
        };
        Ok(desc)
    }
}

#[derive(Clone, Debug)]
enum OpImpl {
    Gaussian(GaussianKernel),
    Resize(Resize2D),
    Kernel(Array2<f64>),
    Highpass(GaussianKernel),
    Observation(ObservationOp),
}

/// A linear operator on fields of a fixed input shape, with its adjoint.
#[derive(Clone, Debug)]
pub struct LinearOp {
    descriptor: OpDescriptor,
    in_dim: (usize, usize),
    out_dim: (usize, usize),
    imp: OpImpl,
}

impl LinearOp {
    pub fn new(descriptor: OpDescriptor, in_dim: (usize, usize)) -> Result<Self> {
        let (h, w) = in_dim;
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput("operator input must be non-empty".into()));
        }
        let (imp, out_dim) = match &descriptor {
            OpDescriptor::GaussianConv { sigma_px } => (
                OpImpl::Gaussian(GaussianKernel::with_default_radius(*sigma_px)?),
                in_dim,
            ),
            OpDescriptor::Highpass { sigma_px } => (
                OpImpl::Highpass(GaussianKernel::with_default_radius(*sigma_px)?),
                in_dim,
            ),
            OpDescriptor::BicubicDown { factor } => {
                let r = *factor;
                if r == 0 || h % r != 0 || w % r != 0 {
                    return Err(Error::Shape(format!("{h}x{w} not divisible by {r}")));
                }
                let out = (h / r, w / r);
                (OpImpl::Resize(Resize2D::new(in_dim, out, Interp::CatmullRom)), out)
            }
            OpDescriptor::BicubicUp { factor } => {
                let r = *factor;
                if r == 0 {
                    return Err(Error::InvalidInput("factor must be positive".into()));
                }
                let out = (h * r, w * r);
                (OpImpl::Resize(Resize2D::new(in_dim, out, Interp::CatmullRom)), out)
            }
            OpDescriptor::Sobel { direction } => {
                if h < 3 || w < 3 {
                    return Err(Error::InvalidInput("Sobel needs at least 3x3".into()));
                }
                (OpImpl::Kernel(sobel_kernels()[*direction].clone()), in_dim)
            }
            OpDescriptor::Observation { factor, sigma_px } => {
                let r = *factor;
                if r == 0 || h % r != 0 || w % r != 0 {
                    return Err(Error::Shape(format!("{h}x{w} not divisible by {r}")));
                }
                (
                    OpImpl::Observation(ObservationOp::new(r, *sigma_px)?),
                    (h / r, w / r),
                )
            }
        };
        Ok(Self {
            descriptor,
            in_dim,
            out_dim,
            imp,
        })
    }

    pub fn descriptor(&self) -> &OpDescriptor {
        &self.descriptor
    }

    pub fn in_dim(&self) -> (usize, usize) {
        self.in_dim
    }

    pub fn out_dim(&self) -> (usize, usize) {
        self.out_dim
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.dim() != self.in_dim {
            return Err(Error::Shape(format!(
                "{}: input {:?}, expected {:?}",
                self.descriptor,
                x.dim(),
                self.in_dim
            )));
        }
        Ok(match &self.imp {
            OpImpl::Gaussian(k) => k.apply(x),
            OpImpl::Resize(r) => r.apply(x),
            OpImpl::Kernel(k) => correlate(x, k.view())?,
            OpImpl::Highpass(k) => highpass_array(x, k),
            OpImpl::Observation(op) => op.apply(x)?,
        })
    }

    pub fn adjoint(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        if y.dim() != self.out_dim {
            return Err(Error::Shape(format!(
                "{} adjoint: input {:?}, expected {:?}",
                self.descriptor,
                y.dim(),
                self.out_dim
            )));
        }
        Ok(match &self.imp {
            OpImpl::Gaussian(k) => k.apply_adjoint(y),
            OpImpl::Resize(r) => r.apply_adjoint(y),
            OpImpl::Kernel(k) => correlate_adjoint(y, k.view())?,
            OpImpl::Highpass(k) => highpass_adjoint_array(y, k),
            OpImpl::Observation(op) => op.apply_adjoint(y, self.in_dim)?,
        })
    }

    /// Relative error of `⟨Ax, y⟩ = ⟨x, Aᵀy⟩` for standard-normal `x`, `y`.
    pub fn dot_product_test<R: Rng>(&self, rng: &mut R) -> Result<f64> {
        let x = Array2::from_shape_simple_fn(self.in_dim, || rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_simple_fn(self.out_dim, || rng.sample::<f64, _>(StandardNormal));
        let lhs = (&self.forward(x.view())? * &y).sum();
        let rhs = (&x * &self.adjoint(y.view())?).sum();
        Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE))
    }
}

/// Builds the forward/adjoint pair named by `descriptor` for inputs of `in_dim`.
pub fn adjoint_of(descriptor: &str, in_dim: (usize, usize)) -> Result<LinearOp> {
    LinearOp::new(descriptor.parse()?, in_dim)
}
