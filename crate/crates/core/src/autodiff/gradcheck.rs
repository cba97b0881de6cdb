//! Finite-difference verification of the recorded operations.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{RunningStats, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::linops::{sobel_kernels, GaussianKernel};

/// Every differentiable operation the tape supports, by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    Conv2dBias,
    BatchNormTrain,
    BatchNormEval,
    Relu,
    AvgPool2,
    Upsample2,
    Concat,
    Add,
    Sobel,
    Gaussian,
    BicubicDown,
    Huber,
    Mse,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Conv2d,
        OpKind::Conv2dBias,
        OpKind::BatchNormTrain,
        OpKind::BatchNormEval,
        OpKind::Relu,
        OpKind::AvgPool2,
        OpKind::Upsample2,
        OpKind::Concat,
        OpKind::Add,
        OpKind::Sobel,
        OpKind::Gaussian,
        OpKind::BicubicDown,
        OpKind::Huber,
        OpKind::Mse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Conv2dBias => "conv2d_bias",
            OpKind::BatchNormTrain => "batchnorm_train",
            OpKind::BatchNormEval => "batchnorm_eval",
            OpKind::Relu => "relu",
            OpKind::AvgPool2 => "avgpool2",
            OpKind::Upsample2 => "upsample2",
            OpKind::Concat => "concat",
            OpKind::Add => "add",
            OpKind::Sobel => "sobel",
            OpKind::Gaussian => "gaussian",
            OpKind::BicubicDown => "bicubic_down",
            OpKind::Huber => "huber",
            OpKind::Mse => "mse",
        }
    }

    /// Small input shapes that exercise borders and channel mixing.
    pub fn default_shapes(self) -> Vec<[usize; 4]> {
        let x = [2, 3, 6, 5];
        match self {
            OpKind::Conv2d => vec![x, [2, 3, 3, 3]],
            OpKind::Conv2dBias => vec![x, [2, 3, 3, 3], [1, 2, 1, 1]],
            OpKind::BatchNormTrain | OpKind::BatchNormEval => {
                vec![x, [1, 3, 1, 1], [1, 3, 1, 1]]
            }
            OpKind::Concat => vec![x, [2, 2, 6, 5]],
            OpKind::Add | OpKind::Huber | OpKind::Mse => vec![x, x],
            OpKind::AvgPool2 => vec![[2, 2, 6, 4]],
            OpKind::BicubicDown => vec![[1, 2, 8, 12]],
            _ => vec![x],
        }
    }

    /// Largest acceptable relative error for this op.
    pub fn tolerance(self) -> f64 {
        match self {
            OpKind::Relu => 1e-8,
            OpKind::Conv2d | OpKind::Conv2dBias => 1e-5,
            OpKind::BatchNormTrain | OpKind::BatchNormEval | OpKind::Huber => 1e-4,
            _ => 1e-6,
        }
    }

    fn apply(self, tape: &mut Tape, vars: &[Var], stats: &mut RunningStats) -> Result<Var> {
        let arg = |k: usize| {
            vars.get(k)
                .copied()
                .ok_or_else(|| Error::Shape(format!("{} needs {} inputs", self.name(), k + 1)))
        };
        match self {
            OpKind::Conv2d => tape.conv2d(arg(0)?, arg(1)?, None),
            OpKind::Conv2dBias => tape.conv2d(arg(0)?, arg(1)?, Some(arg(2)?)),
            OpKind::BatchNormTrain | OpKind::BatchNormEval => tape.batch_norm(
                arg(0)?,
                arg(1)?,
                arg(2)?,
                stats,
                self == OpKind::BatchNormTrain,
            ),
            OpKind::Relu => tape.relu(arg(0)?),
            OpKind::AvgPool2 => tape.avg_pool2(arg(0)?),
            OpKind::Upsample2 => tape.upsample2(arg(0)?),
            OpKind::Concat => tape.concat(&[arg(0)?, arg(1)?]),
            OpKind::Add => tape.add(arg(0)?, arg(1)?),
            OpKind::Sobel => {
                let x = arg(0)?;
                let parts = sobel_kernels()
                    .iter()
                    .map(|k| tape.correlate(x, k))
                    .collect::<Result<Vec<_>>>()?;
                tape.concat(&parts)
            }
            OpKind::Gaussian => {
                let k = GaussianKernel::with_default_radius(1.5)?;
                tape.gaussian(arg(0)?, &k)
            }
            OpKind::BicubicDown => {
                let x = arg(0)?;
                let [_, _, h, w] = tape.value(x).shape();
                tape.bicubic(x, (h / 4, w / 4))
            }
            OpKind::Huber => tape.huber(arg(0)?, arg(1)?, 0.5),
            OpKind::Mse => tape.mse(arg(0)?, arg(1)?),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownOperator(s.to_string()))
    }
}

/// Worst relative discrepancy between analytic and central-difference
/// gradients of `f` over every element of every input.
///
/// Non-scalar outputs are reduced with fixed random weights first. The
/// relative error of an entry is measured against the larger of the two
/// gradients, floored at 1e-3 of the largest numeric gradient so that
/// entries that should vanish do not dominate.
pub fn grad_check_fn<F>(f: F, inputs: &[Tensor], eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut reduce: Option<Tensor> = None;
    let mut eval = |inputs: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        let loss = if tape.value(out).numel() == 1 {
            out
        } else {
            let shape = tape.value(out).shape();
            let w = reduce
                .get_or_insert_with(|| {
                    let n: usize = shape.iter().product();
                    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .expect("length matches shape")
                })
                .clone();
            tape.weighted_sum(out, w)?
        };
        let value = tape.value(loss).item()?;
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let gs = vars
            .iter()
            .map(|v| {
                grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()))
            })
            .collect();
        Ok((value, gs))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].numel());
        for j in 0..inputs[k].numel() {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + eps;
            let (fp, _) = eval(&work, false)?;
            work[k].data_mut()[j] = orig - eps;
            let (fm, _) = eval(&work, false)?;
            work[k].data_mut()[j] = orig;
            g.push((fp - fm) / (2.0 * eps));
        }
        numeric.push(g);
    }

    let scale = numeric
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (x, y) in a.data().iter().zip(n) {
            let err = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Gradient check of a registered op on seeded random inputs.
pub fn grad_check(op: OpKind, input_shapes: &[[usize; 4]], eps: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|&shape| {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    if op == OpKind::Relu {
                        // stay clear of the kink at zero
                        u.signum() * (0.1 + 0.9 * u.abs())
                    } else {
                        u
                    }
                })
                .collect();
            Tensor::from_vec(shape, data)
        })
        .collect::<Result<_>>()?;
    let channels = input_shapes.first().map_or(0, |s| s[1]);
    let base_stats = RunningStats {
        mean: (0..channels).map(|_| rng.random_range(-0.5..0.5)).collect(),
        var: (0..channels).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    grad_check_fn(
        |tape, vars| {
            let mut stats = base_stats.clone();
            op.apply(tape, vars, &mut stats)
        },
        &inputs,
        eps,
        seed,
    )
}
