use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::NormStats;

/// Shape of the network: channel widths of the input stage and the three
/// encoder levels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub widths: [usize; 4],
    pub in_channels: usize,
    pub out_channels: usize,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            widths: [8, 16, 32, 64],
            in_channels: 2,
            out_channels: 1,
            seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "channel widths must be positive, got {:?}",
                self.widths
            )));
        }
        if self.in_channels != 2 {
            return Err(Error::Config(format!(
                "the network takes NDVI and upsampled LST (2 channels), not {}",
                self.in_channels
            )));
        }
        if self.out_channels != 1 {
            return Err(Error::Config(format!(
                "the network predicts one LST channel, not {}",
                self.out_channels
            )));
        }
        Ok(())
    }
}

/// Spatial sizes must survive three 2× poolings.
pub const SIZE_MULTIPLE: usize = 8;

/// Multi-residual U-Net with bias-free 3×3 convolutions.
///
/// Every conv block is conv → batch norm → ReLU. The input stage runs two
/// blocks. Each encoder level average-pools, runs two width-preserving blocks
/// whose output is added to the pooled input, then a third block that
/// widens. Each decoder level upsamples bilinearly, concatenates the skip
/// connection and runs two blocks. A final convolution maps to one channel.
#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    stats: Vec<RunningStats>,
}

struct Cursor<'a> {
    vars: &'a [Var],
    param: usize,
    block: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        let v = self.vars[self.param];
        self.param += 1;
        v
    }
}

impl UNet {
    /// Builds the network with seeded He-uniform conv weights and unit/zero
    /// batch-norm scale/shift.
    pub fn new(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut net = Self {
            config: config.clone(),
            names: Vec::new(),
            params: Vec::new(),
            stats: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let [c0, c1, c2, c3] = config.widths;
        let c = [c0, c1, c2, c3];
        net.push_block("inc.0", config.in_channels, c0, &mut rng);
        net.push_block("inc.1", c0, c0, &mut rng);
        for k in 1..4 {
            net.push_block(&format!("enc{k}.0"), c[k - 1], c[k - 1], &mut rng);
            net.push_block(&format!("enc{k}.1"), c[k - 1], c[k - 1], &mut rng);
            net.push_block(&format!("enc{k}.2"), c[k - 1], c[k], &mut rng);
        }
        for k in (1..4).rev() {
            net.push_block(&format!("dec{k}.0"), c[k] + c[k - 1], c[k - 1], &mut rng);
            net.push_block(&format!("dec{k}.1"), c[k - 1], c[k - 1], &mut rng);
        }
        let w = he_uniform([config.out_channels, c0, 3, 3], &mut rng);
        net.names.push("out.weight".into());
        net.params.push(w);
        Ok(net)
    }

    fn push_block(&mut self, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) {
        self.names.push(format!("{name}.weight"));
        self.params.push(he_uniform([cout, cin, 3, 3], rng));
        self.names.push(format!("{name}.bn.weight"));
        self.params.push(Tensor::full([1, cout, 1, 1], 1.0));
        self.names.push(format!("{name}.bn.bias"));
        self.params.push(Tensor::zeros([1, cout, 1, 1]));
        self.stats.push(RunningStats::new(cout));
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not a positive multiple of {SIZE_MULTIPLE}"
            )));
        }
        Ok(())
    }

    /// Records the network on `tape`. Parameters become trainable leaves
    /// (returned in parameter order). In train mode batch norm uses batch
    /// statistics and `stats` is updated.
    pub fn forward_with_stats(
        &self,
        tape: &mut Tape,
        x: Var,
        stats: &mut [RunningStats],
        train: bool,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.value(x).shape())?;
        if stats.len() != self.stats.len() {
            return Err(Error::Shape("running statistics do not match the network".into()));
        }
        let vars = self
            .params
            .iter()
            .map(|p| {
                if train {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cur = Cursor {
            vars: &vars,
            param: 0,
            block: 0,
        };
        let mut block = |tape: &mut Tape, cur: &mut Cursor, x: Var| -> Result<Var> {
            let (w, g, b) = (cur.next(), cur.next(), cur.next());
            let y = tape.conv2d(x, w, None)?;
            let y = tape.batch_norm(y, g, b, &mut stats[cur.block], train)?;
            cur.block += 1;
            tape.relu(y)
        };

        let h = block(tape, &mut cur, x)?;
        let h = block(tape, &mut cur, h)?;
        let mut skips = vec![h];
        let mut h = h;
        for _ in 1..4 {
            let p = tape.avg_pool2(h)?;
            let a = block(tape, &mut cur, p)?;
            let a = block(tape, &mut cur, a)?;
            let r = tape.add(p, a)?;
            h = block(tape, &mut cur, r)?;
            skips.push(h);
        }
        skips.pop();
        while let Some(skip) = skips.pop() {
            let u = tape.upsample2(h)?;
            let cat = tape.concat(&[u, skip])?;
            let a = block(tape, &mut cur, cat)?;
            h = block(tape, &mut cur, a)?;
        }
        let w = cur.next();
        let out = tape.conv2d(h, w, None)?;
        Ok((out, vars))
    }

    /// Train-mode forward that folds batch statistics into the running ones.
    pub fn forward_train(&mut self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut stats = self.stats.clone();
        let result = self.forward_with_stats(tape, x, &mut stats, true);
        self.stats = stats;
        result
    }

    /// Deterministic eval-mode prediction for a `(n, 2, h, w)` input.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone())?;
        let mut stats = self.stats.clone();
        let (y, _) = self.forward_with_stats(&mut tape, x, &mut stats, false)?;
        Ok(tape.value(y).clone())
    }

    /// Saves weights, running statistics and the standardization in use.
    pub fn save(&self, path: &Path, norm: &NormStats, mode: &str) -> Result<()> {
        let mut tensors: Vec<(String, Tensor)> = self
            .names
            .iter()
            .cloned()
            .zip(self.params.iter().cloned())
            .collect();
        for (i, s) in self.stats.iter().enumerate() {
            let c = s.mean.len();
            tensors.push((format!("bn{i}.running_mean"), Tensor::from_vec([1, c, 1, 1], s.mean.clone())?));
            tensors.push((format!("bn{i}.running_var"), Tensor::from_vec([1, c, 1, 1], s.var.clone())?));
        }
        let meta = serde_json::json!({
            "unet": self.config,
            "norm_stats": norm,
            "mode": mode,
            "param_count": self.param_count(),
        });
        save_checkpoint(path, &tensors, meta)
    }

    /// Loads a model written by [`UNet::save`] with its standardization and mode tag.
    pub fn load(path: &Path) -> Result<(Self, NormStats, String)> {
        let (tensors, meta) = load_checkpoint(path)?;
        let bad = |what: &str| Error::format(path, what.to_string());
        let config: UNetConfig = serde_json::from_value(meta["unet"].clone())
            .map_err(|e| Error::format(path, e.to_string()))?;
        let norm: NormStats = serde_json::from_value(meta["norm_stats"].clone())
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mode = meta["mode"].as_str().unwrap_or_default().to_string();
        let mut net = UNet::new(&config)?;
        let n_params = net.params.len();
        if tensors.len() != n_params + 2 * net.stats.len() {
            return Err(bad("tensor count does not match the network layout"));
        }
        for (i, (name, t)) in tensors.iter().take(n_params).enumerate() {
            if *name != net.names[i] || t.shape() != net.params[i].shape() {
                return Err(Error::format(path, format!("unexpected tensor {name}")));
            }
            net.params[i] = t.clone();
        }
        for (i, pair) in tensors[n_params..].chunks_exact(2).enumerate() {
            let c = net.stats[i].mean.len();
            if pair[0].1.numel() != c || pair[1].1.numel() != c {
                return Err(bad("running statistics have the wrong width"));
            }
            net.stats[i].mean = pair[0].1.data().to_vec();
            net.stats[i].var = pair[1].1.data().to_vec();
        }
        Ok((net, norm, mode))
    }
}

fn he_uniform(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let fan_in = shape[1] * shape[2] * shape[3];
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
