//! Two-dimensional discrete Fourier transform on row-major planes.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Unnormalized forward transform `Σ x·exp(−2πi(ky·y/h + kx·x/w))`.
pub(crate) fn fft2(data: &mut Array2<Complex64>) {
    transform(data, false);
}

/// Inverse transform including the `1/(h·w)` factor.
pub(crate) fn ifft2(data: &mut Array2<Complex64>) {
    transform(data, true);
    let n = data.len() as f64;
    data.mapv_inplace(|v| v / n);
}

fn transform(data: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = data.dim();
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for mut row in data.rows_mut() {
        let mut buf: Vec<Complex64> = row.to_vec();
        row_fft.process(&mut buf);
        row.iter_mut().zip(buf).for_each(|(d, s)| *d = s);
    }
    for mut col in data.columns_mut() {
        let mut buf: Vec<Complex64> = col.to_vec();
        col_fft.process(&mut buf);
        col.iter_mut().zip(buf).for_each(|(d, s)| *d = s);
    }
}

/// Signed frequency index of bin `k` on an `n`-point axis.
pub(crate) fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parseval_holds() {
        let n = 16;
        let x = Array2::from_shape_fn((n, n), |(y, x)| ((y * 13 + x * 5) % 7) as f64 - 3.0);
        let mut f = x.mapv(|v| Complex64::new(v, 0.0));
        fft2(&mut f);
        let energy: f64 = f.iter().map(|c| c.norm_sqr()).sum();
        let direct: f64 = x.iter().map(|v| v * v).sum::<f64>() * (n * n) as f64;
        assert!((energy - direct).abs() < 1e-6 * direct);
    }

    #[test]
    fn matches_direct_dft() {
        let (h, w) = (3, 4);
        let x = Array2::from_shape_fn((h, w), |(y, x)| Complex64::new((y * 7 + x * 3) as f64 % 5.0, 0.0));
        let mut f = x.clone();
        fft2(&mut f);
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ph = -2.0 * std::f64::consts::PI
                            * (ky as f64 * y as f64 / h as f64 + kx as f64 * xx as f64 / w as f64);
                        acc += x[[y, xx]] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - f[[ky, kx]]).norm() < 1e-12);
            }
        }
        ifft2(&mut f);
        for (a, b) in f.iter().zip(x.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
