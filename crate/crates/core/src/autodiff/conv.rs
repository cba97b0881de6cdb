//! 3×3 convolution with replicate padding, plus its two adjoints.

use super::tensor::Tensor;

/// Copies every plane of `x` into a `(h+2)×(w+2)` buffer with edge replication.
fn pad_planes(x: &Tensor) -> Vec<f64> {
    let [n, c, h, w] = x.shape();
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; n * c * ph * pw];
    for (plane, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(ph * pw)) {
        for py in 0..ph {
            let sy = py.saturating_sub(1).min(h - 1);
            let src = &plane[sy * w..(sy + 1) * w];
            let row = &mut dst[py * pw..(py + 1) * pw];
            row[0] = src[0];
            row[1..=w].copy_from_slice(src);
            row[w + 1] = src[w - 1];
        }
    }
    out
}

/// Adds a padded-plane gradient back onto the unpadded plane it was replicated from.
fn fold_plane(padded: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let pw = w + 2;
    for py in 0..h + 2 {
        let sy = py.saturating_sub(1).min(h - 1);
        let src = &padded[py * pw..(py + 1) * pw];
        let dst = &mut out[sy * w..(sy + 1) * w];
        dst[0] += src[0];
        for (d, s) in dst.iter_mut().zip(&src[1..=w]) {
            *d += s;
        }
        dst[w - 1] += src[w + 1];
    }
}

/// `y[n,o] = Σ_i w[o,i] ⋆ pad(x[n,i])`, weights shaped `(out, in, 3, 3)`.
pub(crate) fn conv3x3(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let [n, cin, h, w] = x.shape();
    let cout = weight.shape()[0];
    let pw = w + 2;
    let plen = (h + 2) * pw;
    let padded = pad_planes(x);
    let wd = weight.data();
    let mut out = Tensor::zeros([n, cout, h, w]);
    for b in 0..n {
        for o in 0..cout {
            let dst = out.plane_mut(b, o);
            if let Some(bias) = bias {
                dst.fill(bias.data()[o]);
            }
            for i in 0..cin {
                let src = &padded[(b * cin + i) * plen..(b * cin + i + 1) * plen];
                let k = &wd[(o * cin + i) * 9..(o * cin + i + 1) * 9];
                for y in 0..h {
                    let row = &mut dst[y * w..(y + 1) * w];
                    for ky in 0..3 {
                        let base = (y + ky) * pw;
                        let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                        let s0 = &src[base..base + w];
                        let s1 = &src[base + 1..base + 1 + w];
                        let s2 = &src[base + 2..base + 2 + w];
                        for x in 0..w {
                            row[x] += k0 * s0[x] + k1 * s1[x] + k2 * s2[x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv3x3`] with respect to input, weights and (summed) bias.
pub(crate) fn conv3x3_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
    want_weight: bool,
) -> (Option<Tensor>, Option<Tensor>, Vec<f64>) {
    let [n, cin, h, w] = x.shape();
    let cout = weight.shape()[0];
    let pw = w + 2;
    let plen = (h + 2) * pw;
    let wd = weight.data();

    let mut grad_bias = vec![0.0; cout];
    for b in 0..n {
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            *gb += grad_out.plane(b, o).iter().sum::<f64>();
        }
    }

    let grad_weight = want_weight.then(|| {
        let padded = pad_planes(x);
        let mut gw = Tensor::zeros(weight.shape());
        let gwd = gw.data_mut();
        for b in 0..n {
            for o in 0..cout {
                let g = grad_out.plane(b, o);
                for i in 0..cin {
                    let src = &padded[(b * cin + i) * plen..(b * cin + i + 1) * plen];
                    let acc = &mut gwd[(o * cin + i) * 9..(o * cin + i + 1) * 9];
                    for y in 0..h {
                        let grow = &g[y * w..(y + 1) * w];
                        for ky in 0..3 {
                            let base = (y + ky) * pw;
                            for kx in 0..3 {
                                let s = &src[base + kx..base + kx + w];
                                acc[ky * 3 + kx] +=
                                    grow.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
        gw
    });

    let grad_input = want_input.then(|| {
        let mut gx = Tensor::zeros(x.shape());
        let mut gpad = vec![0.0; plen];
        for b in 0..n {
            for i in 0..cin {
                gpad.fill(0.0);
                for o in 0..cout {
                    let g = grad_out.plane(b, o);
                    let k = &wd[(o * cin + i) * 9..(o * cin + i + 1) * 9];
                    for y in 0..h {
                        let grow = &g[y * w..(y + 1) * w];
                        for ky in 0..3 {
                            let base = (y + ky) * pw;
                            let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                            let dst = &mut gpad[base..base + w + 2];
                            for x in 0..w {
                                let gv = grow[x];
                                dst[x] += k0 * gv;
                                dst[x + 1] += k1 * gv;
                                dst[x + 2] += k2 * gv;
                            }
                        }
                    }
                }
                fold_plane(&gpad, h, w, gx.plane_mut(b, i));
            }
        }
        gx
    });

    (grad_input, grad_weight, grad_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct per-pixel evaluation with clamped indices.
    fn naive(x: &Tensor, wt: &Tensor) -> Tensor {
        let [n, cin, h, w] = x.shape();
        let cout = wt.shape()[0];
        let mut out = Tensor::zeros([n, cout, h, w]);
        for b in 0..n {
            for o in 0..cout {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for i in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = (y as isize + ky as isize - 1).clamp(0, h as isize - 1);
                                    let sx = (xx as isize + kx as isize - 1).clamp(0, w as isize - 1);
                                    acc += wt.data()[((o * cin + i) * 3 + ky) * 3 + kx]
                                        * x.plane(b, i)[sy as usize * w + sx as usize];
                                }
                            }
                        }
                        out.plane_mut(b, o)[y * w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: [usize; 4], scale: f64) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|i| ((i * 37 % 11) as f64 - 5.0) * scale).collect())
            .unwrap()
    }

    #[test]
    fn matches_naive_convolution() {
        let x = ramp([2, 3, 5, 4], 0.1);
        let wt = ramp([2, 3, 3, 3], 0.3);
        let fast = conv3x3(&x, &wt, None);
        let slow = naive(&x, &wt);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_is_adjoint() {
        let x = ramp([1, 2, 4, 6], 0.2);
        let wt = ramp([3, 2, 3, 3], 0.5);
        let g = ramp([1, 3, 4, 6], 0.7);
        let y = conv3x3(&x, &wt, None);
        let (gx, _, _) = conv3x3_backward(&x, &wt, &g, true, false);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn weight_gradient_is_adjoint() {
        let x = ramp([2, 2, 3, 3], 0.2);
        let wt = ramp([2, 2, 3, 3], 0.5);
        let g = ramp([2, 2, 3, 3], 0.7);
        let y = conv3x3(&x, &wt, None);
        let (_, gw, _) = conv3x3_backward(&x, &wt, &g, false, true);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = wt.data().iter().zip(gw.unwrap().data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
