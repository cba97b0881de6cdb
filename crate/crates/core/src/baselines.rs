//! Statistical sharpening baselines: bicubic interpolation, TsHARP and
//! area-to-point regression kriging (ATPRK).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{bicubic_resize, mtf_degrade};
use crate::raster::{replicate, Grid2D, ScenePair};

/// Coarse NDVI seen through the same observation operator as the LST.
pub fn degrade_ndvi(ndvi_hr: &Grid2D, r: usize, sigma_px: f64) -> Result<Grid2D> {
    mtf_degrade(ndvi_hr, r, sigma_px)
}

/// Ordinary least-squares line `T ≈ slope·V + intercept` with its residuals.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
    pub residual_lr: Grid2D,
}

impl LinearModel {
    pub fn predict(&self, ndvi: &Grid2D) -> Result<Grid2D> {
        ndvi.map_valid(|v| self.slope * v + self.intercept)
    }
}

pub fn fit_linear(t_lr: &Grid2D, v_lr: &Grid2D) -> Result<LinearModel> {
    if t_lr.dim() != v_lr.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", t_lr.dim(), v_lr.dim())));
    }
    let joint = &t_lr.mask() & &v_lr.mask();
    let pts: Vec<(f64, f64)> = joint
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|(p, _)| (v_lr.values()[p], t_lr.values()[p]))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Empty(format!(
            "regression needs 2 jointly valid pixels, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let vm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let tm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - vm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - vm) * (p.1 - tm)).sum();
    let scale = pts.iter().fold(vm.abs(), |m, p| m.max(p.0.abs())).max(f64::MIN_POSITIVE);
    if sxx <= n * (1e-12 * scale).powi(2) {
        return Err(Error::Degenerate("NDVI is constant on the coarse grid".into()));
    }
    let slope = sxy / sxx;
    let intercept = tm - slope * vm;
    let mut res = Array2::zeros(t_lr.dim());
    for (p, &m) in joint.indexed_iter() {
        if m {
            res[p] = t_lr.values()[p] - (slope * v_lr.values()[p] + intercept);
        }
    }
    let residual_lr = Grid2D::with_mask(res, joint, t_lr.pixel_size())?.with_units(t_lr.units());
    Ok(LinearModel {
        slope,
        intercept,
        residual_lr,
    })
}

/// Regression on coarse NDVI, applied to fine NDVI, plus nearest-neighbour
/// upsampled residuals.
pub fn tsharp_sharpen(pair: &ScenePair, sigma_px: f64) -> Result<Grid2D> {
    let r = pair.scale_factor();
    let v_lr = degrade_ndvi(pair.ndvi_hr(), r, sigma_px)?;
    let model = fit_linear(pair.lst_lr(), &v_lr)?;
    let trend = model.predict(pair.ndvi_hr())?;
    let residual = replicate(&model.residual_lr, r)?;
    add_fields(&trend, &residual, pair.lst_lr().units())
}

fn add_fields(a: &Grid2D, b: &Grid2D, units: &str) -> Result<Grid2D> {
    let values = &a.values() + &b.values();
    let mask = &a.mask() & &b.mask();
    Ok(Grid2D::with_mask(values, mask, a.pixel_size())?.with_units(units))
}

/// Bicubic interpolation of the LST onto the NDVI grid.
pub fn bicubic_baseline(pair: &ScenePair) -> Result<Grid2D> {
    let ndvi = pair.ndvi_hr();
    let out = bicubic_resize(pair.lst_lr(), ndvi.width(), ndvi.height())?;
    out.with_pixel_size(ndvi.pixel_size())
}

// ---------------------------------------------------------------------------
// Variograms

/// Method-of-moments semivariances binned by rounded lag distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    /// Mean pair distance in each bin, meters.
    pub lags_m: Vec<f64>,
    pub semivariances: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Minimum number of valid pixels for a variogram estimate.
pub const MIN_VARIOGRAM_PIXELS: usize = 30;

pub fn empirical_variogram(residual: &Grid2D, max_lag_px: usize) -> Result<EmpiricalVariogram> {
    let valid = residual.valid_count();
    if valid < MIN_VARIOGRAM_PIXELS {
        return Err(Error::Empty(format!(
            "variogram needs {MIN_VARIOGRAM_PIXELS} valid pixels, got {valid}"
        )));
    }
    if max_lag_px == 0 {
        return Err(Error::Config("maximum lag must be at least one pixel".into()));
    }
    let (h, w) = residual.dim();
    let z = residual.values();
    let m = residual.mask();
    let bins = max_lag_px;
    let mut sum = vec![0.0; bins + 1];
    let mut dist = vec![0.0; bins + 1];
    let mut count = vec![0usize; bins + 1];
    let ml = max_lag_px as isize;
    for dy in 0..=ml {
        for dx in -ml..=ml {
            if dy == 0 && dx <= 0 {
                continue;
            }
            let d = ((dy * dy + dx * dx) as f64).sqrt();
            let bin = d.round() as usize;
            if bin > bins {
                continue;
            }
            for y in 0..h as isize - dy {
                for x in 0..w as isize {
                    let (x2, y2) = (x + dx, y + dy);
                    if x2 < 0 || x2 >= w as isize {
                        continue;
                    }
                    let (p, q) = ((y as usize, x as usize), (y2 as usize, x2 as usize));
                    if m[p] && m[q] {
                        sum[bin] += 0.5 * (z[p] - z[q]).powi(2);
                        dist[bin] += d;
                        count[bin] += 1;
                    }
                }
            }
        }
    }
    let ps = residual.pixel_size();
    let mut out = EmpiricalVariogram {
        lags_m: Vec::new(),
        semivariances: Vec::new(),
        counts: Vec::new(),
    };
    for b in 1..=bins {
        if count[b] > 0 {
            out.lags_m.push(dist[b] / count[b] as f64 * ps);
            out.semivariances.push(sum[b] / count[b] as f64);
            out.counts.push(count[b]);
        }
    }
    if out.lags_m.is_empty() {
        return Err(Error::Empty("no pixel pairs within the maximum lag".into()));
    }
    Ok(out)
}

/// Exponential model `nugget + partial_sill·(1 − exp(−3h/range))`, zero at `h = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub nugget: f64,
    pub partial_sill: f64,
    pub range_m: f64,
    /// Set when the fit fell back to a pure-nugget model.
    pub fallback: bool,
    pub empirical: EmpiricalVariogram,
}

impl VariogramModel {
    pub fn exponential(nugget: f64, partial_sill: f64, range_m: f64) -> Self {
        Self {
            nugget,
            partial_sill,
            range_m,
            fallback: false,
            empirical: EmpiricalVariogram {
                lags_m: Vec::new(),
                semivariances: Vec::new(),
                counts: Vec::new(),
            },
        }
    }

    pub fn semivariance(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.nugget + self.partial_sill * (1.0 - (-3.0 * h / self.range_m).exp())
        }
    }

    /// `C(h) = sill − γ(h)`.
    pub fn covariance(&self, h: f64) -> f64 {
        self.nugget + self.partial_sill - self.semivariance(h)
    }

    pub fn is_pure_nugget(&self) -> bool {
        self.fallback || self.partial_sill <= 1e-12 * (self.nugget + self.partial_sill).max(f64::MIN_POSITIVE)
    }
}

/// Weighted least-squares fit of nugget and partial sill (both ≥ 0) for a
/// fixed range; returns `(nugget, sill, weighted SSE)`.
fn fit_linear_part(e: &EmpiricalVariogram, range: f64) -> (f64, f64, f64) {
    let basis: Vec<f64> = e.lags_m.iter().map(|h| 1.0 - (-3.0 * h / range).exp()).collect();
    let wts: Vec<f64> = e.counts.iter().map(|&c| c as f64).collect();
    let sse = |n: f64, s: f64| -> f64 {
        basis
            .iter()
            .zip(&e.semivariances)
            .zip(&wts)
            .map(|((b, g), w)| w * (n + s * b - g).powi(2))
            .sum()
    };
    let (mut sw, mut sb, mut sbb, mut sg, mut sbg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((b, g), w) in basis.iter().zip(&e.semivariances).zip(&wts) {
        sw += w;
        sb += w * b;
        sbb += w * b * b;
        sg += w * g;
        sbg += w * b * g;
    }
    let mut candidates = vec![(sg / sw, 0.0)];
    if sbb > 0.0 {
        candidates.push((0.0, (sbg / sbb).max(0.0)));
    }
    let det = sw * sbb - sb * sb;
    if det.abs() > 1e-14 * sw * sbb {
        let n = (sg * sbb - sb * sbg) / det;
        let s = (sw * sbg - sb * sg) / det;
        if n >= 0.0 && s >= 0.0 {
            candidates.push((n, s));
        }
    }
    candidates
        .into_iter()
        .map(|(n, s)| (n.max(0.0), s, sse(n.max(0.0), s)))
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .expect("at least one candidate")
}

/// Fits the exponential model by weighted least squares (weights are pair
/// counts): a log-spaced scan over the range followed by golden-section
/// refinement, with the linear parameters solved exactly at each range.
pub fn fit_variogram(empirical: &EmpiricalVariogram) -> Result<VariogramModel> {
    let e = empirical;
    if e.lags_m.len() < 3 {
        return Err(Error::Empty(format!(
            "variogram fit needs 3 lag bins, got {}",
            e.lags_m.len()
        )));
    }
    let pure_nugget = || {
        let wsum: f64 = e.counts.iter().map(|&c| c as f64).sum();
        let mean = e
            .semivariances
            .iter()
            .zip(&e.counts)
            .map(|(g, &c)| g * c as f64)
            .sum::<f64>()
            / wsum;
        VariogramModel {
            nugget: mean.max(0.0),
            partial_sill: 0.0,
            range_m: e.lags_m[0],
            fallback: true,
            empirical: e.clone(),
        }
    };
    let h_min = e.lags_m[0];
    let h_max = *e.lags_m.last().expect("non-empty");
    let (lo, hi) = ((h_min / 10.0).ln(), (h_max * 10.0).ln());
    let steps = 60;
    let cost = |ln_a: f64| fit_linear_part(e, ln_a.exp()).2;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect();
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| cost(*a.1).total_cmp(&cost(*b.1)))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(steps)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..60 {
        if cost(c) < cost(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    let ln_range = 0.5 * (a + b);
    let range = ln_range.exp();
    let (nugget, sill, sse) = fit_linear_part(e, range);
    if !(sse.is_finite() && nugget.is_finite() && sill.is_finite() && range.is_finite()) {
        return Ok(pure_nugget());
    }
    if sill <= 0.0 {
        return Ok(VariogramModel {
            fallback: true,
            ..pure_nugget()
        });
    }
    Ok(VariogramModel {
        nugget,
        partial_sill: sill,
        range_m: range,
        fallback: false,
        empirical: e.clone(),
    })
}

// ---------------------------------------------------------------------------
// Area-to-point kriging

/// Kriging weights over coarse pixels for one fine pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelWeights {
    /// Flat (row-major) coarse indices.
    pub sources: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Per-fine-pixel area-to-point kriging weights over a square neighbourhood
/// of coarse pixels, with the unit-sum constraint.
#[derive(Clone, Debug)]
pub struct KrigingPlan {
    pub scale_factor: usize,
    pub neighborhood: usize,
    pub lr_dim: (usize, usize),
    /// Row-major over the fine grid; `None` where no coarse datum is reachable.
    pub pixels: Vec<Option<PixelWeights>>,
    /// True when every system was solved with the Lagrange unit-sum row.
    pub unit_sum: bool,
    /// Fine pixels that fell back to nearest-neighbour weights.
    pub fallbacks: usize,
}

/// Averaged covariances between areal and point supports on the fine grid.
struct SupportCovariance<'a> {
    model: &'a VariogramModel,
    r: usize,
    fine_m: f64,
    area_area: HashMap<(isize, isize), f64>,
}

impl<'a> SupportCovariance<'a> {
    fn new(model: &'a VariogramModel, r: usize, fine_m: f64) -> Self {
        Self {
            model,
            r,
            fine_m,
            area_area: HashMap::new(),
        }
    }

    fn point(&self, dy: f64, dx: f64) -> f64 {
        self.model.covariance(dy.hypot(dx) * self.fine_m)
    }

    /// Coarse block to coarse block at coarse offset `(di, dj)`.
    fn area_area(&mut self, di: isize, dj: isize) -> f64 {
        if let Some(v) = self.area_area.get(&(di, dj)) {
            return *v;
        }
        let r = self.r as isize;
        let mut acc = 0.0;
        for u in -(r - 1)..r {
            for v in -(r - 1)..r {
                let mult = ((r - u.abs()) * (r - v.abs())) as f64;
                acc += mult * self.point((di * r + u) as f64, (dj * r + v) as f64);
            }
        }
        let val = acc / (r * r * r * r) as f64;
        self.area_area.insert((di, dj), val);
        self.area_area.insert((-di, -dj), val);
        val
    }

    /// Fine pixel at fine offset `(fy, fx)` from the origin of a coarse block.
    fn point_area(&self, fy: isize, fx: isize) -> f64 {
        let r = self.r as isize;
        let mut acc = 0.0;
        for a in 0..r {
            for b in 0..r {
                acc += self.point((fy - a) as f64, (fx - b) as f64);
            }
        }
        acc / (r * r) as f64
    }
}

/// First coarse index of an `n`-wide window centred on `center` and kept
/// inside `[0, len)`.
fn window_start(center: usize, n: usize, len: usize) -> usize {
    if n >= len {
        return 0;
    }
    center.saturating_sub(n / 2).min(len - n)
}

impl KrigingPlan {
    /// Builds weights for every fine pixel. Coarse pixels masked in `valid`
    /// are excluded from the systems.
    pub fn new(
        valid: &Array2<bool>,
        model: &VariogramModel,
        r: usize,
        fine_pixel_m: f64,
        neighborhood: usize,
    ) -> Result<Self> {
        if neighborhood == 0 || neighborhood % 2 == 0 {
            return Err(Error::Config(format!(
                "kriging neighbourhood {neighborhood} must be odd"
            )));
        }
        if r == 0 {
            return Err(Error::Config("scale factor must be positive".into()));
        }
        let (h, w) = valid.dim();
        let (nh, nw) = (neighborhood.min(h), neighborhood.min(w));
        let mut cov = SupportCovariance::new(model, r, fine_pixel_m);
        let nearest_only = model.is_pure_nugget();
        let mut cache: HashMap<(usize, usize, usize, usize), Option<Vec<f64>>> = HashMap::new();
        let mut pixels = Vec::with_capacity(h * w * r * r);
        let mut fallbacks = 0usize;
        for fy in 0..h * r {
            for fx in 0..w * r {
                let (ci, cj) = (fy / r, fx / r);
                if nearest_only {
                    pixels.push(valid[(ci, cj)].then(|| PixelWeights {
                        sources: vec![ci * w + cj],
                        weights: vec![1.0],
                    }));
                    continue;
                }
                let (i0, j0) = (window_start(ci, nh, h), window_start(cj, nw, w));
                let sources: Vec<(usize, usize)> = (i0..i0 + nh)
                    .flat_map(|i| (j0..j0 + nw).map(move |j| (i, j)))
                    .filter(|&p| valid[p])
                    .collect();
                if sources.is_empty() {
                    pixels.push(None);
                    continue;
                }
                let (ry, rx) = (fy - i0 * r, fx - j0 * r);
                let full = sources.len() == nh * nw;
                let solved = if full {
                    cache
                        .entry((ry, rx, nh, nw))
                        .or_insert_with(|| solve_system(&mut cov, &sources, i0, j0, ry, rx))
                        .clone()
                } else {
                    solve_system(&mut cov, &sources, i0, j0, ry, rx)
                };
                let weights = match solved {
                    Some(wts) => wts,
                    None => {
                        fallbacks += 1;
                        if valid[(ci, cj)] {
                            pixels.push(Some(PixelWeights {
                                sources: vec![ci * w + cj],
                                weights: vec![1.0],
                            }));
                        } else {
                            pixels.push(None);
                        }
                        continue;
                    }
                };
                pixels.push(Some(PixelWeights {
                    sources: sources.iter().map(|&(i, j)| i * w + j).collect(),
                    weights,
                }));
            }
        }
        Ok(Self {
            scale_factor: r,
            neighborhood,
            lr_dim: (h, w),
            pixels,
            unit_sum: !nearest_only,
            fallbacks,
        })
    }

    /// Applies the weights to a coarse residual field.
    pub fn apply(&self, residual_lr: &Grid2D) -> Result<Grid2D> {
        if residual_lr.dim() != self.lr_dim {
            return Err(Error::Shape(format!(
                "plan built for {:?}, residual is {:?}",
                self.lr_dim,
                residual_lr.dim()
            )));
        }
        let r = self.scale_factor;
        let (h, w) = self.lr_dim;
        let z = residual_lr.values();
        let zs = z.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| z.iter().copied().collect());
        let mut values = Array2::zeros((h * r, w * r));
        let mut mask = Array2::from_elem((h * r, w * r), false);
        for (k, px) in self.pixels.iter().enumerate() {
            if let Some(px) = px {
                let p = (k / (w * r), k % (w * r));
                values[p] = px.sources.iter().zip(&px.weights).map(|(&s, wt)| wt * zs[s]).sum();
                mask[p] = true;
            }
        }
        Ok(Grid2D::with_mask(values, mask, residual_lr.pixel_size() / r as f64)?
            .with_units(residual_lr.units()))
    }
}

/// Solves the ordinary-kriging system for one fine pixel at fine offset
/// `(ry, rx)` from the window origin `(i0, j0)`. A singular system is retried
/// with a diagonal ridge; `None` means both attempts failed.
fn solve_system(
    cov: &mut SupportCovariance,
    sources: &[(usize, usize)],
    i0: usize,
    j0: usize,
    ry: usize,
    rx: usize,
) -> Option<Vec<f64>> {
    let n = sources.len();
    let r = cov.r as isize;
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut b = DVector::<f64>::zeros(n + 1);
    for (p, &(ip, jp)) in sources.iter().enumerate() {
        for (q, &(iq, jq)) in sources.iter().enumerate().skip(p) {
            let v = cov.area_area(iq as isize - ip as isize, jq as isize - jp as isize);
            a[(p, q)] = v;
            a[(q, p)] = v;
        }
        a[(p, n)] = 1.0;
        a[(n, p)] = 1.0;
        let fy = ry as isize - (ip - i0) as isize * r;
        let fx = rx as isize - (jp - j0) as isize * r;
        b[p] = cov.point_area(fy, fx);
    }
    b[n] = 1.0;
    let scale = (0..n).map(|k| a[(k, k)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let attempt = |m: DMatrix<f64>| -> Option<Vec<f64>> {
        let x = m.lu().solve(&b)?;
        let w: Vec<f64> = x.iter().take(n).copied().collect();
        let sum: f64 = w.iter().sum();
        (w.iter().all(|v| v.is_finite()) && (sum - 1.0).abs() < 1e-9).then_some(w)
    };
    attempt(a.clone()).or_else(|| {
        let mut ridged = a;
        for k in 0..n {
            ridged[(k, k)] += 1e-8 * scale;
        }
        attempt(ridged)
    })
}

/// Interpolates coarse residuals onto the fine grid by area-to-point kriging.
pub fn atp_kriging(
    residual_lr: &Grid2D,
    model: &VariogramModel,
    r: usize,
    neighborhood: usize,
) -> Result<Grid2D> {
    let plan = KrigingPlan::new(
        &residual_lr.mask().to_owned(),
        model,
        r,
        residual_lr.pixel_size() / r as f64,
        neighborhood,
    )?;
    plan.apply(residual_lr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtprkConfig {
    pub neighborhood: usize,
    /// Largest variogram lag in coarse pixels; half the shorter side when unset.
    pub max_lag_px: Option<usize>,
}

impl Default for AtprkConfig {
    fn default() -> Self {
        Self {
            neighborhood: 5,
            max_lag_px: None,
        }
    }
}

/// Regression prediction on the fine grid plus kriged residuals.
pub fn atprk_sharpen(pair: &ScenePair, sigma_px: f64) -> Result<Grid2D> {
    atprk_sharpen_with(pair, sigma_px, &AtprkConfig::default())
}

pub fn atprk_sharpen_with(pair: &ScenePair, sigma_px: f64, cfg: &AtprkConfig) -> Result<Grid2D> {
    let r = pair.scale_factor();
    let v_lr = degrade_ndvi(pair.ndvi_hr(), r, sigma_px)?;
    let model = fit_linear(pair.lst_lr(), &v_lr)?;
    let trend = model.predict(pair.ndvi_hr())?;
    let (h, w) = model.residual_lr.dim();
    let max_lag = cfg.max_lag_px.unwrap_or((h.min(w) / 2).max(1));
    let residual_hr = if model.residual_lr.values().iter().all(|&v| v == 0.0) {
        replicate(&model.residual_lr, r)?
    } else {
        let emp = empirical_variogram(&model.residual_lr, max_lag)?;
        let vario = fit_variogram(&emp)?;
        atp_kriging(&model.residual_lr, &vario, r, cfg.neighborhood)?
    };
    add_fields(&trend, &residual_hr, pair.lst_lr().units())
}
