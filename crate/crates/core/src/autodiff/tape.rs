use ndarray::Array2;

use super::conv::{conv3x3, conv3x3_backward};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::linops::{correlate, correlate_adjoint, GaussianKernel, Interp, Resize2D};
use crate::objective::{huber, huber_derivative};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Non-trainable linear map applied independently to every plane.
#[derive(Clone, Debug)]
pub enum PlaneOp {
    Correlate(Array2<f64>),
    Gaussian(GaussianKernel),
    Resize(Resize2D),
}

impl PlaneOp {
    fn forward(&self, t: &Tensor) -> Result<Tensor> {
        self.map_planes(t, true)
    }

    fn adjoint(&self, g: &Tensor) -> Result<Tensor> {
        self.map_planes(g, false)
    }

    fn map_planes(&self, t: &Tensor, forward: bool) -> Result<Tensor> {
        let [n, c, _, _] = t.shape();
        let mut planes = Vec::with_capacity(n * c);
        for b in 0..n {
            for ch in 0..c {
                let p = t.plane_view(b, ch);
                planes.push(match (self, forward) {
                    (PlaneOp::Correlate(k), true) => correlate(p, k.view())?,
                    (PlaneOp::Correlate(k), false) => correlate_adjoint(p, k.view())?,
                    (PlaneOp::Gaussian(k), true) => k.apply(p),
                    (PlaneOp::Gaussian(k), false) => k.apply_adjoint(p),
                    (PlaneOp::Resize(r), true) => r.apply(p),
                    (PlaneOp::Resize(r), false) => r.apply_adjoint(p),
                });
            }
        }
        let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
        Tensor::from_planes(n, c, &views)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        x_hat: Tensor,
        inv_std: Vec<f64>,
        train: bool,
    },
    Relu(Var),
    AvgPool2(Var),
    Linear {
        input: Var,
        op: PlaneOp,
    },
    Concat(Vec<Var>),
    LinComb(Vec<(Var, f64)>),
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Tensor,
    },
    Huber {
        input: Var,
        target: Var,
        delta: f64,
    },
    Mse {
        input: Var,
        target: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that gradients can be pulled back through it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output from {}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable input or parameter.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let [_, cin, _, _] = self.value(input).shape();
        let ws = self.value(weight).shape();
        if ws[1] != cin || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::Shape(format!(
                "conv weight {ws:?} for {cin} input channels"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != ws[0] {
                return Err(Error::Shape("conv bias length".into()));
            }
        }
        let out = conv3x3(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
            rg,
        )
    }

    /// Batch normalization; in train mode the batch statistics are used and
    /// folded into `stats`, in eval mode `stats` is used as is.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        train: bool,
    ) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c || stats.mean.len() != c
        {
            return Err(Error::Shape(format!("batch norm over {c} channels")));
        }
        let m = (n * h * w) as f64;
        if train && n * h * w < 2 {
            return Err(Error::InvalidInput(
                "batch norm in train mode needs at least two values per channel".into(),
            ));
        }
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut s = 0.0;
                for b in 0..n {
                    s += x.plane(b, ch).iter().sum::<f64>();
                }
                let mean = s / m;
                let mut ss = 0.0;
                for b in 0..n {
                    ss += x.plane(b, ch).iter().map(|v| (v - mean).powi(2)).sum::<f64>();
                }
                let var = ss / m;
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean;
                stats.var[ch] =
                    (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * ss / (m - 1.0);
                (mean, var)
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = is;
            for b in 0..n {
                let src = x.plane(b, ch);
                let xh = x_hat.plane_mut(b, ch);
                for (d, s) in xh.iter_mut().zip(src) {
                    *d = (s - mean) * is;
                }
                let xh = x_hat.plane(b, ch).to_vec();
                for (o, v) in out.plane_mut(b, ch).iter_mut().zip(&xh) {
                    *o = g[ch] * v + bt[ch];
                }
            }
        }
        let rg = self.any_grad(&[input, gamma, beta]);
        self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            },
            rg,
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).map(|v| v.max(0.0));
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.shape();
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("cannot pool {h}x{w} by 2")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for b in 0..n {
            for ch in 0..c {
                let src = x.plane(b, ch);
                let dst = out.plane_mut(b, ch);
                for y in 0..oh {
                    let r0 = &src[2 * y * w..(2 * y + 1) * w];
                    let r1 = &src[(2 * y + 1) * w..(2 * y + 2) * w];
                    for xx in 0..ow {
                        dst[y * ow + xx] =
                            0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
                    }
                }
            }
        }
        let rg = self.any_grad(&[input]);
        self.push(out, Op::AvgPool2(input), rg)
    }

    /// Applies a fixed linear map to every plane; its adjoint is the backward pass.
    pub fn linear(&mut self, input: Var, op: PlaneOp) -> Result<Var> {
        let x = self.value(input);
        let [_, _, h, w] = x.shape();
        if let PlaneOp::Resize(r) = &op {
            if r.in_dim() != (h, w) {
                return Err(Error::Shape(format!(
                    "resize expects {:?}, got {:?}",
                    r.in_dim(),
                    (h, w)
                )));
            }
        }
        let out = op.forward(x)?;
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Linear { input, op }, rg)
    }

    /// Bilinear ×2 upsampling with half-pixel alignment.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let [_, _, h, w] = self.value(input).shape();
        let op = PlaneOp::Resize(Resize2D::new((h, w), (2 * h, 2 * w), Interp::Bilinear));
        self.linear(input, op)
    }

    /// Fixed-kernel correlation with replicate padding.
    pub fn correlate(&mut self, input: Var, kernel: &Array2<f64>) -> Result<Var> {
        self.linear(input, PlaneOp::Correlate(kernel.clone()))
    }

    pub fn gaussian(&mut self, input: Var, kernel: &GaussianKernel) -> Result<Var> {
        self.linear(input, PlaneOp::Gaussian(kernel.clone()))
    }

    /// Bicubic resampling of every plane to `out_dim`.
    pub fn bicubic(&mut self, input: Var, out_dim: (usize, usize)) -> Result<Var> {
        let [_, _, h, w] = self.value(input).shape();
        self.linear(
            input,
            PlaneOp::Resize(Resize2D::new((h, w), out_dim, Interp::CatmullRom)),
        )
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let [n, _, h, w] = self.value(*first).shape();
        let mut c_total = 0;
        for v in inputs {
            let [vn, vc, vh, vw] = self.value(*v).shape();
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Shape("concat operands differ in batch or size".into()));
            }
            c_total += vc;
        }
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for b in 0..n {
            let mut c0 = 0;
            for v in inputs {
                let t = self.value(*v);
                for ch in 0..t.shape()[1] {
                    out.plane_mut(b, c0 + ch).copy_from_slice(t.plane(b, ch));
                }
                c0 += t.shape()[1];
            }
        }
        let rg = self.any_grad(inputs);
        self.push(out, Op::Concat(inputs.to_vec()), rg)
    }

    /// `Σ cᵢ·xᵢ` over operands of one shape.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = terms
            .first()
            .ok_or_else(|| Error::Shape("empty linear combination".into()))?;
        let mut out = Tensor::zeros(self.value(*first).shape());
        for (v, c) in terms {
            let t = self.value(*v);
            same_shape(&out, t, "linear combination")?;
            for (o, x) in out.data_mut().iter_mut().zip(t.data()) {
                *o += c * x;
            }
        }
        let vars: Vec<Var> = terms.iter().map(|(v, _)| *v).collect();
        let rg = self.any_grad(&vars);
        self.push(out, Op::LinComb(terms.to_vec()), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lin_comb(&[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lin_comb(&[(a, 1.0), (b, -1.0)])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.lin_comb(&[(a, factor)])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).sum();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(s), Op::Sum(input), rg)
    }

    /// `Σ wᵢ·xᵢ` with fixed weights.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor) -> Result<Var> {
        same_shape(self.value(input), &weights, "weighted sum")?;
        let s = self
            .value(input)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(s), Op::WeightedSum { input, weights }, rg)
    }

    /// Mean Huber penalty of `input − target` over all elements.
    pub fn huber(&mut self, input: Var, target: Var, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::Config(format!("huber delta {delta} must be positive")));
        }
        let (x, t) = (self.value(input), self.value(target));
        same_shape(x, t, "huber")?;
        let n = x.numel() as f64;
        let s: f64 = x
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| huber(a - b, delta))
            .sum();
        let rg = self.any_grad(&[input, target]);
        self.push(
            Tensor::scalar(s / n),
            Op::Huber {
                input,
                target,
                delta,
            },
            rg,
        )
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, input: Var, target: Var) -> Result<Var> {
        let (x, t) = (self.value(input), self.value(target));
        same_shape(x, t, "mse")?;
        let n = x.numel() as f64;
        let s: f64 = x
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let rg = self.any_grad(&[input, target]);
        self.push(Tensor::scalar(s / n), Op::Mse { input, target }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Graph("loss is not on this tape".into()))?;
        if node.value.numel() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Graph(
                "loss does not depend on any trainable value".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.pull_back(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn pull_back(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
            } => {
                let (gx, gw, gb) = conv3x3_backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    self.wants(*input),
                    self.wants(*weight),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *input, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *weight, gw);
                }
                if let Some(b) = bias {
                    let shape = self.value(*b).shape();
                    self.accumulate(grads, *b, Tensor::from_vec(shape, gb)?);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            } => {
                let [n, c, _, _] = g.shape();
                let m = (g.numel() / c) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        for (gy, xh) in g.plane(b, ch).iter().zip(x_hat.plane(b, ch)) {
                            dbeta[ch] += gy;
                            dgamma[ch] += gy * xh;
                        }
                    }
                }
                if self.wants(*input) {
                    let mut gx = Tensor::zeros(g.shape());
                    for b in 0..n {
                        for ch in 0..c {
                            let k = gam[ch] * inv_std[ch];
                            let gy = g.plane(b, ch);
                            let xh = x_hat.plane(b, ch);
                            let dst = gx.plane_mut(b, ch);
                            for j in 0..dst.len() {
                                dst[j] = if *train {
                                    k * (gy[j] - dbeta[ch] / m - xh[j] * dgamma[ch] / m)
                                } else {
                                    k * gy[j]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *input, gx);
                }
                let gshape = self.value(*gamma).shape();
                self.accumulate(grads, *gamma, Tensor::from_vec(gshape, dgamma)?);
                let bshape = self.value(*beta).shape();
                self.accumulate(grads, *beta, Tensor::from_vec(bshape, dbeta)?);
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let mut gx = g.clone();
                for (d, v) in gx.data_mut().iter_mut().zip(x.data()) {
                    if *v <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.accumulate(grads, *input, gx);
            }
            Op::AvgPool2(input) => {
                let shape = self.value(*input).shape();
                let [n, c, _, w] = shape;
                let [_, _, oh, ow] = g.shape();
                let mut gx = Tensor::zeros(shape);
                for b in 0..n {
                    for ch in 0..c {
                        let src = g.plane(b, ch);
                        let dst = gx.plane_mut(b, ch);
                        for y in 0..oh {
                            for xx in 0..ow {
                                let v = 0.25 * src[y * ow + xx];
                                dst[2 * y * w + 2 * xx] = v;
                                dst[2 * y * w + 2 * xx + 1] = v;
                                dst[(2 * y + 1) * w + 2 * xx] = v;
                                dst[(2 * y + 1) * w + 2 * xx + 1] = v;
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, gx);
            }
            Op::Linear { input, op } => {
                if self.wants(*input) {
                    self.accumulate(grads, *input, op.adjoint(g)?);
                }
            }
            Op::Concat(inputs) => {
                let n = g.shape()[0];
                let mut c0 = 0;
                for v in inputs {
                    let shape = self.value(*v).shape();
                    if self.wants(*v) {
                        let mut gv = Tensor::zeros(shape);
                        for b in 0..n {
                            for ch in 0..shape[1] {
                                gv.plane_mut(b, ch).copy_from_slice(g.plane(b, c0 + ch));
                            }
                        }
                        self.accumulate(grads, *v, gv);
                    }
                    c0 += shape[1];
                }
            }
            Op::LinComb(terms) => {
                for (v, c) in terms {
                    if self.wants(*v) {
                        self.accumulate(grads, *v, g.map(|x| c * x));
                    }
                }
            }
            Op::Sum(input) => {
                let gv = g.item()?;
                let shape = self.value(*input).shape();
                self.accumulate(grads, *input, Tensor::full(shape, gv));
            }
            Op::WeightedSum { input, weights } => {
                let gv = g.item()?;
                self.accumulate(grads, *input, weights.map(|w| gv * w));
            }
            Op::Huber {
                input,
                target,
                delta,
            } => {
                let gv = g.item()?;
                let (x, t) = (self.value(*input), self.value(*target));
                let scale = gv / x.numel() as f64;
                let mut gx = Tensor::zeros(x.shape());
                for ((d, a), b) in gx.data_mut().iter_mut().zip(x.data()).zip(t.data()) {
                    *d = scale * huber_derivative(a - b, *delta);
                }
                if self.wants(*target) {
                    self.accumulate(grads, *target, gx.map(|v| -v));
                }
                self.accumulate(grads, *input, gx);
            }
            Op::Mse { input, target } => {
                let gv = g.item()?;
                let (x, t) = (self.value(*input), self.value(*target));
                let scale = 2.0 * gv / x.numel() as f64;
                let mut gx = Tensor::zeros(x.shape());
                for ((d, a), b) in gx.data_mut().iter_mut().zip(x.data()).zip(t.data()) {
                    *d = scale * (a - b);
                }
                if self.wants(*target) {
                    self.accumulate(grads, *target, gx.map(|v| -v));
                }
                self.accumulate(grads, *input, gx);
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::BatchNorm { .. } => "batch_norm",
        Op::Relu(_) => "relu",
        Op::AvgPool2(_) => "avg_pool2",
        Op::Linear { .. } => "fixed linear op",
        Op::Concat(_) => "concat",
        Op::LinComb(_) => "linear combination",
        Op::Sum(_) => "sum",
        Op::WeightedSum { .. } => "weighted sum",
        Op::Huber { .. } => "huber",
        Op::Mse { .. } => "mse",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t([1, 1, 2, 2], &[1.0, -2.0, 3.0, 0.5])).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn half_mse_gradient_closed_form() {
        let xs = [0.3, -1.2, 2.0, 0.7, 1.1, -0.4];
        let ts = [0.1, 0.2, -0.3, 0.4, 0.5, 0.6];
        let mut tape = Tape::new();
        let x = tape.param(t([1, 1, 2, 3], &xs)).unwrap();
        let tt = tape.constant(t([1, 1, 2, 3], &ts)).unwrap();
        let m = tape.mse(x, tt).unwrap();
        let half = tape.scale(m, 0.5).unwrap();
        let g = tape.backward(half).unwrap();
        for (i, gv) in g.get(x).unwrap().data().iter().enumerate() {
            assert!((gv - (xs[i] - ts[i]) / 6.0).abs() < 1e-15);
        }
        assert!(g.get(tt).is_none());
    }

    #[test]
    fn fan_out_gradients_add() {
        let mut tape = Tape::new();
        let x = tape.param(t([1, 1, 1, 3], &[1.0, -1.0, 2.0])).unwrap();
        let a = tape.relu(x).unwrap();
        let b = tape.scale(x, 3.0).unwrap();
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, 3.0, 4.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(t([1, 1, 1, 2], &[0.0, 1.0])).unwrap();
        let r = tape.relu(x).unwrap();
        let loss = tape.sum(r).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_non_scalar_and_detached_losses() {
        let mut tape = Tape::new();
        let x = tape.param(t([1, 1, 1, 2], &[1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Graph(_))));
        let c = tape.constant(t([1, 1, 1, 2], &[1.0, 2.0])).unwrap();
        let s = tape.sum(c).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Graph(_))));
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let mut tape = Tape::new();
        let x = tape.param(t([1, 1, 1, 1], &[1e200])).unwrap();
        let y = tape.scale(x, 1e200);
        assert!(matches!(y, Err(Error::Numeric(_))));
    }

    #[test]
    fn batch_norm_eval_is_order_independent() {
        let mut stats = RunningStats {
            mean: vec![0.5],
            var: vec![2.0],
        };
        let run = |data: &[f64], stats: &mut RunningStats| {
            let mut tape = Tape::new();
            let x = tape.constant(t([2, 1, 1, 2], data)).unwrap();
            let gm = tape.param(t([1, 1, 1, 1], &[1.5])).unwrap();
            let bt = tape.param(t([1, 1, 1, 1], &[-0.2])).unwrap();
            let y = tape.batch_norm(x, gm, bt, stats, false).unwrap();
            tape.value(y).clone()
        };
        let a = run(&[1.0, 2.0, 3.0, 4.0], &mut stats);
        let b = run(&[3.0, 4.0, 1.0, 2.0], &mut stats);
        assert_eq!(a.plane(0, 0), b.plane(1, 0));
        assert_eq!(a.plane(1, 0), b.plane(0, 0));
        assert_eq!(stats.mean, vec![0.5]);
    }

    #[test]
    fn batch_norm_train_updates_running_stats() {
        let mut stats = RunningStats::new(1);
        let mut tape = Tape::new();
        let x = tape.constant(t([2, 1, 1, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let gm = tape.param(t([1, 1, 1, 1], &[1.0])).unwrap();
        let bt = tape.param(t([1, 1, 1, 1], &[0.0])).unwrap();
        let y = tape.batch_norm(x, gm, bt, &mut stats, true).unwrap();
        // batch mean 2.5, unbiased variance 5/3
        assert!((stats.mean[0] - 0.25).abs() < 1e-15);
        assert!((stats.var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
        let out = tape.value(y);
        assert!(out.sum().abs() < 1e-12);
    }
}
