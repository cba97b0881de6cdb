//! The scale-invariance-free objective: a Huber reconstruction term through
//! the observation operator plus a Huber texture term comparing fine-scale
//! structure of the candidate with scaled NDVI structure.
//!
//! `total = α·texture + (1 − α)·reconstruction`, evaluated in standardized units.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{
    self, correlate, correlate_adjoint, default_mtf_sigma, highpass_adjoint_array, highpass_array,
    sobel_kernels, GaussianKernel, ObservationOp,
};
use crate::raster::{Grid2D, NormStats, ScenePair};

/// Fine-scale texture extractor G.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TextureOp {
    /// Four directional 3×3 Sobel derivatives.
    Sobel,
    /// `I − K∗I` with the MTF kernel K.
    Highpass,
}

/// Objective hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SifConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub huber_delta: f64,
    pub texture_op: TextureOp,
    pub mtf_sigma_px: f64,
    pub scale_factor: usize,
}

impl SifConfig {
    /// Sobel texture, α = 0.99, γ = −0.5.
    pub fn sif1(scale_factor: usize) -> Self {
        Self {
            alpha: 0.99,
            gamma: -0.5,
            huber_delta: 1.0,
            texture_op: TextureOp::Sobel,
            mtf_sigma_px: default_mtf_sigma(scale_factor),
            scale_factor,
        }
    }

    /// High-pass texture, α = 0.10, γ = −0.25.
    pub fn sif2(scale_factor: usize) -> Self {
        Self {
            alpha: 0.10,
            gamma: -0.25,
            huber_delta: 1.0,
            texture_op: TextureOp::Highpass,
            mtf_sigma_px: default_mtf_sigma(scale_factor),
            scale_factor,
        }
    }

    /// Looks up a named preset (`sif1`, `sif2`).
    pub fn preset(name: &str, scale_factor: usize) -> Result<Self> {
        match name {
            "sif1" => Ok(Self::sif1(scale_factor)),
            "sif2" => Ok(Self::sif2(scale_factor)),
            other => Err(Error::Config(format!("unknown objective preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.huber_delta > 0.0) || !self.huber_delta.is_finite() {
            return Err(Error::Config(format!(
                "huber_delta must be positive, got {}",
                self.huber_delta
            )));
        }
        if !self.gamma.is_finite() {
            return Err(Error::Config("gamma must be finite".into()));
        }
        if !(self.mtf_sigma_px > 0.0) || !self.mtf_sigma_px.is_finite() {
            return Err(Error::Config(format!(
                "mtf_sigma_px must be positive, got {}",
                self.mtf_sigma_px
            )));
        }
        if self.scale_factor < 2 {
            return Err(Error::Config(format!(
                "scale_factor must be at least 2, got {}",
                self.scale_factor
            )));
        }
        Ok(())
    }

    pub fn observation(&self) -> Result<ObservationOp> {
        ObservationOp::new(self.scale_factor, self.mtf_sigma_px)
    }

    pub fn texture_operator(&self) -> Result<TextureOperator> {
        TextureOperator::new(self.texture_op, self.mtf_sigma_px)
    }
}

/// Loss value with its two unweighted terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec_term: f64,
    pub texture_term: f64,
}

impl LossBreakdown {
    pub fn combine(alpha: f64, rec_term: f64, texture_term: f64) -> Self {
        Self {
            total: alpha * texture_term + (1.0 - alpha) * rec_term,
            rec_term,
            texture_term,
        }
    }
}

/// ρ_δ(x): quadratic below δ, linear above.
#[inline]
pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
pub fn huber_derivative(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

/// Mean of ρ_δ(a − b) over pixels valid in both rasters.
pub fn huber_mean(a: &Grid2D, b: &Grid2D, delta: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "huber operands {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    check_delta(delta)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    Zip::from(a.values())
        .and(a.mask())
        .and(b.values())
        .and(b.mask())
        .for_each(|&x, &mx, &y, &my| {
            if mx && my {
                sum += huber(x - y, delta);
                n += 1;
            }
        });
    if n == 0 {
        return Err(Error::Empty("huber operands share no valid pixel".into()));
    }
    Ok(sum / n as f64)
}

/// [`huber_mean`] on fully valid fields.
pub fn huber_mean_arrays(a: ArrayView2<f64>, b: ArrayView2<f64>, delta: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "huber operands {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    check_delta(delta)?;
    if a.is_empty() {
        return Err(Error::Empty("empty huber operands".into()));
    }
    let sum = Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &x, &y| acc + huber(x - y, delta));
    Ok(sum / a.len() as f64)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("huber delta must be positive, got {delta}")))
    }
}

/// The texture operator G with its adjoint, on fully valid fields.
#[derive(Clone, Debug)]
pub struct TextureOperator {
    op: TextureOp,
    kernel: GaussianKernel,
    sobel: [Array2<f64>; 4],
}

impl TextureOperator {
    pub fn new(op: TextureOp, sigma_px: f64) -> Result<Self> {
        Ok(Self {
            op,
            kernel: GaussianKernel::with_default_radius(sigma_px)?,
            sobel: sobel_kernels(),
        })
    }

    pub fn kind(&self) -> TextureOp {
        self.op
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    pub fn channels(&self) -> usize {
        match self.op {
            TextureOp::Sobel => 4,
            TextureOp::Highpass => 1,
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        match self.op {
            TextureOp::Sobel => {
                if x.nrows() < 3 || x.ncols() < 3 {
                    return Err(Error::InvalidInput("Sobel texture needs at least 3x3".into()));
                }
                self.sobel.iter().map(|k| correlate(x, k.view())).collect()
            }
            TextureOp::Highpass => Ok(vec![highpass_array(x, &self.kernel)]),
        }
    }

    /// Σ_c G_cᵀ g_c.
    pub fn adjoint(&self, grads: &[Array2<f64>]) -> Result<Array2<f64>> {
        if grads.len() != self.channels() {
            return Err(Error::Shape(format!(
                "texture adjoint expects {} channels, got {}",
                self.channels(),
                grads.len()
            )));
        }
        match self.op {
            TextureOp::Sobel => {
                let mut acc = correlate_adjoint(grads[0].view(), self.sobel[0].view())?;
                for (g, k) in grads.iter().zip(&self.sobel).skip(1) {
                    acc += &correlate_adjoint(g.view(), k.view())?;
                }
                Ok(acc)
            }
            TextureOp::Highpass => Ok(highpass_adjoint_array(grads[0].view(), &self.kernel)),
        }
    }

    /// Raster-level G; masks follow the underlying operator rules.
    pub fn apply_grid(&self, grid: &Grid2D) -> Result<Vec<Grid2D>> {
        match self.op {
            TextureOp::Sobel => Ok(linops::sobel_directional(grid)?.into()),
            TextureOp::Highpass => Ok(vec![linops::highpass(grid, &self.kernel)?]),
        }
    }
}

/// `huber_mean(T_lr, H(candidate))` in the units of the inputs.
pub fn reconstruction_loss(candidate: &Grid2D, lst_lr: &Grid2D, cfg: &SifConfig) -> Result<f64> {
    let r = cfg.scale_factor;
    if candidate.width() != r * lst_lr.width() || candidate.height() != r * lst_lr.height() {
        return Err(Error::Shape(format!(
            "candidate {:?} is not {r}x the low-resolution grid {:?}",
            candidate.dim(),
            lst_lr.dim()
        )));
    }
    let degraded = linops::mtf_degrade(candidate, r, cfg.mtf_sigma_px)?;
    huber_mean(lst_lr, &degraded, cfg.huber_delta)
}

/// Mean over G-channels of `huber_mean(γ·G(V), G(candidate))`.
pub fn texture_loss(candidate: &Grid2D, ndvi_hr: &Grid2D, cfg: &SifConfig) -> Result<f64> {
    if candidate.dim() != ndvi_hr.dim() {
        return Err(Error::Shape(format!(
            "candidate {:?} vs NDVI {:?}",
            candidate.dim(),
            ndvi_hr.dim()
        )));
    }
    let g = cfg.texture_operator()?;
    let gv = g.apply_grid(ndvi_hr)?;
    let gc = g.apply_grid(candidate)?;
    let mut total = 0.0;
    for (v, c) in gv.iter().zip(&gc) {
        let target = v.map_valid(|x| cfg.gamma * x)?;
        total += huber_mean(&target, c, cfg.huber_delta)?;
    }
    Ok(total / gv.len() as f64)
}

/// Full objective for a Kelvin-valued candidate on the NDVI grid, evaluated
/// after standardizing candidate, LST and NDVI with `stats`.
pub fn sif_loss(
    candidate: &Grid2D,
    pair: &ScenePair,
    stats: &NormStats,
    cfg: &SifConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if candidate.dim() != pair.ndvi_hr().dim() {
        return Err(Error::Shape(format!(
            "candidate {:?} is not on the NDVI grid {:?}",
            candidate.dim(),
            pair.ndvi_hr().dim()
        )));
    }
    let cand = standardize(candidate, stats.lst_mean, stats.lst_std)?;
    let lst = standardize(pair.lst_lr(), stats.lst_mean, stats.lst_std)?;
    let ndvi = standardize(pair.ndvi_hr(), stats.ndvi_mean, stats.ndvi_std)?;
    let rec = reconstruction_loss(&cand, &lst, cfg)?;
    let tex = texture_loss(&cand, &ndvi, cfg)?;
    Ok(LossBreakdown::combine(cfg.alpha, rec, tex))
}

/// `(x − mean) / std` on valid pixels.
pub fn standardize(grid: &Grid2D, mean: f64, std: f64) -> Result<Grid2D> {
    if !(std > 0.0) {
        return Err(Error::Degenerate(format!("std must be positive, got {std}")));
    }
    grid.map_valid(|v| (v - mean) / std)
}

pub fn destandardize(grid: &Grid2D, mean: f64, std: f64) -> Result<Grid2D> {
    if !(std > 0.0) {
        return Err(Error::Degenerate(format!("std must be positive, got {std}")));
    }
    grid.map_valid(|v| v * std + mean)
}

/// A scene prepared for repeated objective evaluations over candidate
/// fields in standardized units (all inputs fully valid).
#[derive(Clone, Debug)]
pub struct SifProblem {
    cfg: SifConfig,
    observation: ObservationOp,
    texture: TextureOperator,
    lst_lr: Array2<f64>,
    texture_target: Vec<Array2<f64>>,
    hr_dim: (usize, usize),
}

impl SifProblem {
    pub fn new(pair: &ScenePair, stats: &NormStats, cfg: &SifConfig) -> Result<Self> {
        cfg.validate()?;
        stats.validate()?;
        if cfg.scale_factor != pair.scale_factor() {
            return Err(Error::Config(format!(
                "objective scale factor {} does not match the scene's {}",
                cfg.scale_factor,
                pair.scale_factor()
            )));
        }
        if !pair.lst_lr().is_fully_valid() || !pair.ndvi_hr().is_fully_valid() {
            return Err(Error::InvalidInput(
                "direct optimization needs fully valid rasters".into(),
            ));
        }
        let lst = standardize(pair.lst_lr(), stats.lst_mean, stats.lst_std)?;
        let ndvi = standardize(pair.ndvi_hr(), stats.ndvi_mean, stats.ndvi_std)?;
        Self::from_standardized(lst.values(), ndvi.values(), cfg)
    }

    /// Builds the problem from already-standardized fields.
    pub fn from_standardized(
        lst_lr: ArrayView2<f64>,
        ndvi_hr: ArrayView2<f64>,
        cfg: &SifConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let r = cfg.scale_factor;
        let hr_dim = ndvi_hr.dim();
        if hr_dim != (lst_lr.nrows() * r, lst_lr.ncols() * r) {
            return Err(Error::Shape(format!(
                "NDVI {hr_dim:?} is not {r}x LST {:?}",
                lst_lr.dim()
            )));
        }
        let texture = cfg.texture_operator()?;
        let texture_target = texture
            .apply(ndvi_hr)?
            .into_iter()
            .map(|g| g * cfg.gamma)
            .collect();
        Ok(Self {
            observation: cfg.observation()?,
            texture,
            lst_lr: lst_lr.to_owned(),
            texture_target,
            hr_dim,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SifConfig {
        &self.cfg
    }

    pub fn hr_dim(&self) -> (usize, usize) {
        self.hr_dim
    }

    pub fn lst_lr(&self) -> ArrayView2<'_, f64> {
        self.lst_lr.view()
    }

    pub fn texture_target(&self) -> &[Array2<f64>] {
        &self.texture_target
    }

    pub fn observation(&self) -> &ObservationOp {
        &self.observation
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.dim() != self.hr_dim {
            return Err(Error::Shape(format!(
                "candidate {:?}, expected {:?}",
                x.dim(),
                self.hr_dim
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: ArrayView2<f64>) -> Result<LossBreakdown> {
        self.check(&x)?;
        let delta = self.cfg.huber_delta;
        let hx = self.observation.apply(x)?;
        let rec = huber_mean_arrays(self.lst_lr.view(), hx.view(), delta)?;
        let gx = self.texture.apply(x)?;
        let mut tex = 0.0;
        for (t, g) in self.texture_target.iter().zip(&gx) {
            tex += huber_mean_arrays(t.view(), g.view(), delta)?;
        }
        tex /= gx.len() as f64;
        Ok(LossBreakdown::combine(self.cfg.alpha, rec, tex))
    }

    /// Loss and its analytic gradient with respect to the candidate field,
    /// assembled from the operator adjoints and the Huber derivative.
    pub fn evaluate_with_gradient(&self, x: ArrayView2<f64>) -> Result<(LossBreakdown, Array2<f64>)> {
        self.check(&x)?;
        let delta = self.cfg.huber_delta;
        let alpha = self.cfg.alpha;

        let hx = self.observation.apply(x)?;
        let n_lr = hx.len() as f64;
        let mut rec = 0.0;
        let mut rec_grad = Array2::zeros(hx.dim());
        Zip::from(&mut rec_grad)
            .and(&hx)
            .and(&self.lst_lr)
            .for_each(|g, &h, &y| {
                let e = h - y;
                rec += huber(e, delta);
                *g = (1.0 - alpha) * huber_derivative(e, delta) / n_lr;
            });
        rec /= n_lr;
        let mut grad = self.observation.apply_adjoint(rec_grad.view(), self.hr_dim)?;

        let gx = self.texture.apply(x)?;
        let channels = gx.len() as f64;
        let mut tex = 0.0;
        let mut channel_grads = Vec::with_capacity(gx.len());
        for (g, t) in gx.iter().zip(&self.texture_target) {
            let n = g.len() as f64;
            let mut cg = Array2::zeros(g.dim());
            let mut sum = 0.0;
            Zip::from(&mut cg).and(g).and(t).for_each(|c, &gv, &tv| {
                let e = gv - tv;
                sum += huber(e, delta);
                *c = alpha * huber_derivative(e, delta) / (n * channels);
            });
            tex += sum / n;
            channel_grads.push(cg);
        }
        tex /= channels;
        grad += &self.texture.adjoint(&channel_grads)?;
        Ok((LossBreakdown::combine(alpha, rec, tex), grad))
    }
}
