//! Direct minimization of the SIF objective over the fine-resolution image.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Optimizer, Tensor};
use crate::error::{Error, Result};
use crate::linops::bicubic_resize_array;
use crate::objective::{LossBreakdown, SifConfig, SifProblem};
use crate::raster::{write_atomic, Grid2D, NormStats, ScenePair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InitKind {
    BicubicUp,
    ConstantMean,
}

/// Stopping and step-size controls. The learning rate is halved whenever the
/// best loss has not improved for `patience` iterations, down to
/// `min_lr_fraction` of its initial value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub max_iters: usize,
    pub lr: f64,
    /// Stop once the best loss improves by less than this fraction over 10 iterations.
    pub rel_tol: f64,
    pub init: InitKind,
    pub patience: usize,
    pub min_lr_fraction: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            lr: 0.05,
            rel_tol: 1e-9,
            init: InitKind::BicubicUp,
            patience: 20,
            min_lr_fraction: 1e-4,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!("rel_tol {} must be positive", self.rel_tol)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.min_lr_fraction > 0.0 && self.min_lr_fraction <= 1.0) {
            return Err(Error::Config("min_lr_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Best-so-far loss after each iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub rec: f64,
    pub texture: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    /// Minimum-loss iterate, in the units of the input LST.
    pub image: Grid2D,
    /// Same iterate in standardized units.
    pub standardized: Array2<f64>,
    pub best: LossBreakdown,
    pub initial: LossBreakdown,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// Starting field for a problem in standardized units.
pub fn initial_field(problem: &SifProblem, init: InitKind) -> Array2<f64> {
    let (h, w) = problem.hr_dim();
    match init {
        InitKind::BicubicUp => bicubic_resize_array(problem.lst_lr(), h, w),
        InitKind::ConstantMean => {
            let m = problem.lst_lr().mean().unwrap_or(0.0);
            Array2::from_elem((h, w), m)
        }
    }
}

/// Adam descent on the pixels of `x0`, returning the best iterate seen.
pub fn minimize(
    problem: &SifProblem,
    x0: Array2<f64>,
    cfg: &SolveConfig,
) -> Result<(Array2<f64>, LossBreakdown, LossBreakdown, Vec<TraceRow>, bool)> {
    cfg.validate()?;
    let (h, w) = problem.hr_dim();
    if x0.dim() != (h, w) {
        return Err(Error::Shape(format!("initial field {:?}, expected {:?}", x0.dim(), (h, w))));
    }
    let mut params = vec![Tensor::from_array(x0.view())];
    let mut adam = Adam::new(cfg.lr);
    let min_lr = cfg.lr * cfg.min_lr_fraction;
    let mut best: Option<(LossBreakdown, Array2<f64>)> = None;
    let mut initial = None;
    let mut trace: Vec<TraceRow> = Vec::with_capacity(cfg.max_iters);
    let mut stale = 0usize;
    let mut converged = false;

    for iter in 0..cfg.max_iters {
        let x = Array2::from_shape_vec((h, w), params[0].data().to_vec())
            .expect("parameter keeps its shape");
        let (loss, grad) = problem.evaluate_with_gradient(x.view())?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "objective became non-finite at iteration {iter} (lr {})",
                adam.learning_rate()
            )));
        }
        initial.get_or_insert(loss);
        let improved = best.as_ref().is_none_or(|(b, _)| loss.total < b.total);
        if improved {
            best = Some((loss, x));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience && adam.learning_rate() > min_lr {
                adam.set_learning_rate((adam.learning_rate() * 0.5).max(min_lr));
                stale = 0;
            }
        }
        let b = &best.as_ref().expect("set above").0;
        trace.push(TraceRow {
            iter,
            rec: b.rec_term,
            texture: b.texture_term,
            total: b.total,
        });
        if b.total == 0.0 {
            converged = true;
            break;
        }
        if iter >= 10 {
            let before = trace[iter - 10].total;
            if (before - b.total) <= cfg.rel_tol * before.abs() && adam.learning_rate() <= min_lr {
                converged = true;
                break;
            }
        }
        let g = Tensor::from_array(grad.view());
        adam.step(&mut params, &[g])?;
    }
    let (best_loss, best_x) = best.expect("at least one iteration");
    Ok((best_x, best_loss, initial.expect("set"), trace, converged))
}

/// Solves one scene: standardize with `stats`, descend, map back.
pub fn solve_direct(
    pair: &ScenePair,
    stats: &NormStats,
    sif: &SifConfig,
    cfg: &SolveConfig,
) -> Result<SolveOutcome> {
    let problem = SifProblem::new(pair, stats, sif)?;
    let x0 = initial_field(&problem, cfg.init);
    let (x, best, initial, trace, converged) = minimize(&problem, x0, cfg)?;
    let kelvin = x.mapv(|v| v * stats.lst_std + stats.lst_mean);
    let image = Grid2D::new(kelvin, pair.ndvi_hr().pixel_size())?.with_units(pair.lst_lr().units());
    Ok(SolveOutcome {
        image,
        standardized: x,
        best,
        initial,
        trace,
        converged,
    })
}

/// Writes the trace as CSV (iter, rec, texture, total).
pub fn write_trace(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in trace {
        w.serialize(row).map_err(|e| Error::io(path, e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}
