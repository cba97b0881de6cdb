use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{UNet, UNetConfig, SIZE_MULTIPLE};
use crate::autodiff::{Adam, Optimizer, Sgd, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linops::{bicubic_resize, default_mtf_sigma, mtf_degrade, sobel_kernels};
use crate::objective::{standardize, LossBreakdown, SifConfig, TextureOp};
use crate::raster::{Grid2D, NormStats, ScenePair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Optimization schedule for either training mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    /// Full-scale settings: 200 epochs, batch 32, learning rate 1e-4.
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 1e-4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    /// Settings sized for a few dozen small synthetic patches.
    pub fn toy() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch size must be at least 2 for batch statistics".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    fn optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Adam => Box::new(Adam::new(self.lr)),
            OptimizerKind::Sgd => Box::new(Sgd::new(self.lr)),
        }
    }
}

/// One training example in standardized units.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    /// `(1, 2, H, W)`: NDVI and bicubic-upsampled LST.
    pub input: Tensor,
    /// `(1, 1, h, w)` low-resolution LST (SIF) or `(1, 1, H, W)` target (SC).
    pub target: Tensor,
    /// `(1, C, H, W)` scaled texture of the NDVI, SIF mode only.
    pub texture: Option<Tensor>,
}

/// What a batch is scored against.
#[derive(Clone, Debug)]
pub enum TrainObjective {
    Sif(SifConfig),
    Mse,
}

fn plane_tensor(a: ArrayView2<f64>) -> Tensor {
    Tensor::from_array(a)
}

/// Replaces masked pixels with 0 (the standardized mean).
fn filled(grid: &Grid2D) -> Array2<f64> {
    let mut v = grid.values().to_owned();
    v.zip_mut_with(&grid.mask(), |x, &m| {
        if !m {
            *x = 0.0;
        }
    });
    v
}

/// Standardized network input for NDVI on the fine grid and LST on a grid
/// `r` times coarser.
fn network_input(ndvi: &Grid2D, lst: &Grid2D, stats: &NormStats) -> Result<(Tensor, Array2<bool>)> {
    let up = bicubic_resize(lst, ndvi.width(), ndvi.height())?;
    let v = standardize(ndvi, stats.ndvi_mean, stats.ndvi_std)?;
    let t = standardize(&up, stats.lst_mean, stats.lst_std)?;
    let mask = &ndvi.mask() & &up.mask();
    let (fv, ft) = (filled(&v), filled(&t));
    Ok((Tensor::from_planes(1, 2, &[fv.view(), ft.view()])?, mask))
}

/// Sample for self-supervised training at the scene's own scale.
pub fn sif_sample(pair: &ScenePair, stats: &NormStats, cfg: &SifConfig) -> Result<TrainingSample> {
    if cfg.scale_factor != pair.scale_factor() {
        return Err(Error::Config(format!(
            "objective scale factor {} does not match the scene's {}",
            cfg.scale_factor,
            pair.scale_factor()
        )));
    }
    if !pair.lst_lr().is_fully_valid() || !pair.ndvi_hr().is_fully_valid() {
        return Err(Error::InvalidInput("training patches must be fully valid".into()));
    }
    let (input, _) = network_input(pair.ndvi_hr(), pair.lst_lr(), stats)?;
    let lst = standardize(pair.lst_lr(), stats.lst_mean, stats.lst_std)?;
    let ndvi = standardize(pair.ndvi_hr(), stats.ndvi_mean, stats.ndvi_std)?;
    let texture = cfg.texture_operator()?.apply(ndvi.values())?;
    let scaled: Vec<Array2<f64>> = texture.into_iter().map(|g| g * cfg.gamma).collect();
    let views: Vec<_> = scaled.iter().map(|g| g.view()).collect();
    Ok(TrainingSample {
        input,
        target: plane_tensor(lst.values()),
        texture: Some(Tensor::from_planes(1, views.len(), &views)?),
    })
}

/// Sample for supervised training one scale tier down: the scene's LST
/// becomes the target, NDVI is degraded onto the LST grid and the LST is
/// degraded once more to form the coarse input.
pub fn sc_sample(pair: &ScenePair, stats: &NormStats) -> Result<TrainingSample> {
    let r = pair.scale_factor();
    let sigma = default_mtf_sigma(r);
    let lst = pair.lst_lr();
    if lst.width() % r != 0 || lst.height() % r != 0 {
        return Err(Error::Shape(format!(
            "LST grid {}x{} cannot be reduced by {r} again",
            lst.height(),
            lst.width()
        )));
    }
    if !lst.is_fully_valid() || !pair.ndvi_hr().is_fully_valid() {
        return Err(Error::InvalidInput("training patches must be fully valid".into()));
    }
    let ndvi_mid = mtf_degrade(pair.ndvi_hr(), r, sigma)?;
    let lst_low = mtf_degrade(lst, r, sigma)?;
    let (input, _) = network_input(&ndvi_mid, &lst_low, stats)?;
    let target = standardize(lst, stats.lst_mean, stats.lst_std)?;
    Ok(TrainingSample {
        input,
        target: plane_tensor(target.values()),
        texture: None,
    })
}

fn stack(tensors: &[&Tensor]) -> Result<Tensor> {
    let [_, c, h, w] = tensors
        .first()
        .ok_or_else(|| Error::Empty("empty batch".into()))?
        .shape();
    let mut data = Vec::with_capacity(tensors.len() * c * h * w);
    for t in tensors {
        if t.shape() != [1, c, h, w] {
            return Err(Error::Shape(format!(
                "batch members differ: {:?} vs {:?}",
                t.shape(),
                [1, c, h, w]
            )));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec([tensors.len(), c, h, w], data)
}

/// Records the loss of network output `y` against a batch of samples and
/// returns it with its breakdown.
pub fn batch_loss(
    tape: &mut Tape,
    y: Var,
    batch: &[&TrainingSample],
    objective: &TrainObjective,
) -> Result<(Var, LossBreakdown)> {
    let target = stack(&batch.iter().map(|s| &s.target).collect::<Vec<_>>())?;
    match objective {
        TrainObjective::Mse => {
            let t = tape.constant(target)?;
            let loss = tape.mse(y, t)?;
            let v = tape.value(loss).item()?;
            Ok((
                loss,
                LossBreakdown {
                    total: v,
                    rec_term: v,
                    texture_term: 0.0,
                },
            ))
        }
        TrainObjective::Sif(cfg) => {
            let observation = cfg.observation()?;
            let texture = cfg.texture_operator()?;
            let [_, _, lh, lw] = target.shape();
            let blurred = tape.gaussian(y, observation.kernel())?;
            let hy = tape.bicubic(blurred, (lh, lw))?;
            let t = tape.constant(target)?;
            let rec = tape.huber(hy, t, cfg.huber_delta)?;

            let tex_target = batch
                .iter()
                .map(|s| {
                    s.texture
                        .as_ref()
                        .ok_or_else(|| Error::InvalidInput("sample has no texture target".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let tex_target = tape.constant(stack(&tex_target)?)?;
            let gy = match texture.kind() {
                TextureOp::Sobel => {
                    let parts = sobel_kernels()
                        .iter()
                        .map(|k| tape.correlate(y, k))
                        .collect::<Result<Vec<_>>>()?;
                    tape.concat(&parts)?
                }
                TextureOp::Highpass => {
                    let low = tape.gaussian(y, texture.kernel())?;
                    tape.sub(y, low)?
                }
            };
            let tex = tape.huber(gy, tex_target, cfg.huber_delta)?;
            let total = tape.lin_comb(&[(tex, cfg.alpha), (rec, 1.0 - cfg.alpha)])?;
            let breakdown = LossBreakdown {
                total: tape.value(total).item()?,
                rec_term: tape.value(rec).item()?,
                texture_term: tape.value(tex).item()?,
            };
            Ok((total, breakdown))
        }
    }
}

impl UNet {
    /// Loss on a batch with train-mode normalization, leaving the running
    /// statistics untouched; gradients follow parameter order when requested.
    pub fn batch_objective(
        &self,
        batch: &[&TrainingSample],
        objective: &TrainObjective,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let x = tape.constant(stack(&batch.iter().map(|s| &s.input).collect::<Vec<_>>())?)?;
        let mut stats = self.running_stats().to_vec();
        let (y, vars) = self.forward_with_stats(&mut tape, x, &mut stats, true)?;
        let (loss, breakdown) = batch_loss(&mut tape, y, batch, objective)?;
        if !want_grad {
            return Ok((breakdown, Vec::new()));
        }
        let grads = gradients_for(&tape, loss, &vars)?;
        Ok((breakdown, grads))
    }
}

fn gradients_for(tape: &Tape, loss: Var, vars: &[Var]) -> Result<Vec<Tensor>> {
    let mut grads = tape.backward(loss)?;
    Ok(vars
        .iter()
        .map(|v| {
            grads
                .take(*v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()))
        })
        .collect())
}

/// Epoch-mean loss terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub rec_term: f64,
    pub texture_term: f64,
    pub total: f64,
}

/// Result of a training run. `model` holds the parameters of the epoch with
/// the lowest mean loss; `divergence` describes an aborted run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: UNet,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub divergence: Option<String>,
}

/// Splits a shuffled index list into batches, folding a lone trailing sample
/// into the previous batch so that batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn fit(
    samples: &[TrainingSample],
    objective: &TrainObjective,
    net: &UNetConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    train.validate()?;
    if samples.len() < 2 {
        return Err(Error::Empty(format!(
            "training needs at least 2 patches, got {}",
            samples.len()
        )));
    }
    let mut model = UNet::new(net)?;
    let mut optimizer = train.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(train.epochs);
    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut divergence = None;

    'epochs: for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let (mut rec, mut tex, mut total) = (0.0, 0.0, 0.0);
        for idx in batches(&order, train.batch_size) {
            let batch: Vec<&TrainingSample> = idx.iter().map(|&i| &samples[i]).collect();
            let step = (|| -> Result<LossBreakdown> {
                let mut tape = Tape::new();
                let x = tape.constant(stack(&batch.iter().map(|s| &s.input).collect::<Vec<_>>())?)?;
                let (y, vars) = model.forward_train(&mut tape, x)?;
                let (loss, breakdown) = batch_loss(&mut tape, y, &batch, objective)?;
                let grads = gradients_for(&tape, loss, &vars)?;
                if grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Numeric("non-finite gradient".into()));
                }
                optimizer.step(model.params_mut(), &grads)?;
                Ok(breakdown)
            })();
            match step {
                Ok(b) => {
                    let w = batch.len() as f64;
                    rec += w * b.rec_term;
                    tex += w * b.texture_term;
                    total += w * b.total;
                }
                Err(e) if e.is_numeric() => {
                    divergence = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let n = samples.len() as f64;
        let log = EpochLog {
            epoch,
            rec_term: rec / n,
            texture_term: tex / n,
            total: total / n,
        };
        if !log.total.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            divergence = Some(format!("epoch {epoch}: loss became non-finite"));
            break;
        }
        if log.total < best.0 {
            best = (log.total, model.clone(), epoch);
        }
        history.push(log);
    }
    Ok(TrainOutcome {
        model: best.1,
        history,
        best_epoch: best.2,
        divergence,
    })
}

fn check_uniform(pairs: &[ScenePair]) -> Result<()> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Empty("training set is empty".into()))?;
    let dim = first.ndvi_hr().dim();
    if pairs.iter().any(|p| p.ndvi_hr().dim() != dim) {
        return Err(Error::Shape("training patches must share one size".into()));
    }
    Ok(())
}

/// Self-supervised training of the network on the SIF objective.
pub fn train_sif(
    pairs: &[ScenePair],
    stats: &NormStats,
    sif: &SifConfig,
    net: &UNetConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    sif.validate()?;
    check_uniform(pairs)?;
    let samples = pairs
        .iter()
        .map(|p| sif_sample(p, stats, sif))
        .collect::<Result<Vec<_>>>()?;
    fit(&samples, &TrainObjective::Sif(sif.clone()), net, train)
}

/// Supervised MSE training one scale tier below the scenes' own.
pub fn train_sc(
    pairs: &[ScenePair],
    stats: &NormStats,
    net: &UNetConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome> {
    check_uniform(pairs)?;
    let samples = pairs
        .iter()
        .map(|p| sc_sample(p, stats))
        .collect::<Result<Vec<_>>>()?;
    fit(&samples, &TrainObjective::Mse, net, train)
}

/// Pads a plane by edge replication to `(h, w)`.
fn pad_to(a: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (ih, iw) = a.dim();
    Array2::from_shape_fn((h, w), |(y, x)| a[[y.min(ih - 1), x.min(iw - 1)]])
}

/// Super-resolves a scene: standardize, upsample LST, run the network in
/// eval mode and map the output back to Kelvin on the NDVI grid.
pub fn infer(model: &UNet, pair: &ScenePair, stats: &NormStats) -> Result<Grid2D> {
    stats.validate()?;
    let ndvi = pair.ndvi_hr();
    let (input, mask) = network_input(ndvi, pair.lst_lr(), stats)?;
    let (h, w) = ndvi.dim();
    let (ph, pw) = (h.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE, w.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE);
    let input = if (ph, pw) == (h, w) {
        input
    } else {
        let a = pad_to(input.plane_view(0, 0), ph, pw);
        let b = pad_to(input.plane_view(0, 1), ph, pw);
        Tensor::from_planes(1, 2, &[a.view(), b.view()])?
    };
    let out = model.predict(&input)?;
    let values = out
        .plane_view(0, 0)
        .slice(s![..h, ..w])
        .mapv(|v| v * stats.lst_std + stats.lst_mean);
    Ok(Grid2D::with_mask(values, mask, ndvi.pixel_size())?.with_units("K"))
}

/// Writes the per-epoch log as CSV.
pub fn write_training_log(history: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for log in history {
        w.serialize(log).map_err(|e| Error::io(path, e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    crate::raster::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_keeps_every_index_once_and_avoids_singletons() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7, 8]]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn train_config_rejects_singleton_batches() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::toy()
        };
        assert!(cfg.validate().is_err());
    }
}
