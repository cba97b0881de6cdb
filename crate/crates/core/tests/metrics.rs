use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sifsr_core::metrics::*;
use sifsr_core::raster::Grid2D;

fn noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| rng.sample(StandardNormal))
}

fn grid(a: Array2<f64>) -> Grid2D {
    Grid2D::new(a, 100.0).unwrap()
}

fn curve(db: Vec<f64>) -> AttenuationSpectrum {
    let n = db.len();
    AttenuationSpectrum {
        nu: (0..n).map(|k| k as f64 / 16.0).collect(),
        counts: vec![1; n],
        pixel_size: 1.0,
        db,
    }
}

#[test]
fn rmse_basic_values() {
    let a = Grid2D::constant(5, 4, 300.0, 1.0).unwrap();
    let b = Grid2D::constant(5, 4, 301.0, 1.0).unwrap();
    assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    assert!((rmse(&a, &b).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn rmse_matches_direct_formula_and_respects_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = (noise(&mut rng, 9, 11), noise(&mut rng, 9, 11));
    let mut mask = Array2::from_elem((9, 11), true);
    mask[(2, 3)] = false;
    mask[(8, 0)] = false;
    let gx = Grid2D::with_mask(x.clone(), mask.clone(), 1.0).unwrap();
    let gy = grid(y.clone());
    let mut acc = 0.0;
    let mut n = 0.0;
    for i in 0..9 {
        for j in 0..11 {
            if mask[(i, j)] {
                acc += (x[(i, j)] - y[(i, j)]).powi(2);
                n += 1.0;
            }
        }
    }
    let want = (acc / n).sqrt();
    assert!((rmse(&gx, &gy).unwrap() - want).abs() < 1e-14);
    assert_eq!(rmse(&gx, &gy).unwrap(), rmse(&gy, &gx).unwrap());
}

#[test]
fn rmse_rejects_disjoint_masks() {
    let a = Grid2D::with_mask(Array2::zeros((2, 2)), Array2::from_elem((2, 2), false), 1.0).unwrap();
    assert!(rmse(&a, &a).is_err());
}

#[test]
fn percentile_follows_linear_interpolation() {
    // numpy.percentile([4, 1, 3, 2, 10], 75) == 4.0; ([1, 2, 3, 4], 75) == 3.25
    assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0, 10.0], 0.75), Some(4.0));
    assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 0.75), Some(3.25));
    assert_eq!(percentile(&[], 0.5), None);
}

#[test]
fn rmse_q75_on_a_ramp_equals_rmse() {
    let reference = grid(Array2::from_shape_fn((12, 12), |(y, x)| 0.3 * x as f64 + 0.1 * y as f64));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sr = grid(&reference.values() + &noise(&mut rng, 12, 12));
    let g = gradient_magnitude(&reference);
    let g0 = g[(0, 0)];
    assert!(g.iter().all(|v| (v - g0).abs() < 1e-12));
    assert!((rmse_q75(&sr, &reference).unwrap() - rmse(&sr, &reference).unwrap()).abs() < 1e-12);
    assert_eq!(rmse_q75(&reference, &reference).unwrap(), 0.0);
}

#[test]
fn rmse_q75_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reference = grid(noise(&mut rng, 16, 16));
    let sr = grid(noise(&mut rng, 16, 16));
    let g = gradient_magnitude(&reference);
    let mut sorted: Vec<f64> = g.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let pos = 0.75 * (sorted.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos.fract());
    let threshold = sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
    let (mut acc, mut n) = (0.0, 0.0);
    for (p, gv) in g.indexed_iter() {
        if *gv >= threshold {
            acc += (sr.values()[p] - reference.values()[p]).powi(2);
            n += 1.0;
        }
    }
    let want = (acc / n).sqrt();
    assert!((rmse_q75(&sr, &reference).unwrap() - want).abs() < 1e-14);
}

#[test]
fn sobel_gradient_matches_stencil_in_the_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = noise(&mut rng, 7, 7);
    let g = gradient_magnitude(&grid(a.clone()));
    for y in 1..6 {
        for x in 1..6 {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for (k, wt) in [(-1isize, 1.0), (0, 2.0), (1, 1.0)] {
                let (yy, xx) = ((y as isize + k) as usize, (x as isize + k) as usize);
                gx += wt * (a[(yy, x + 1)] - a[(yy, x - 1)]) / 8.0;
                gy += wt * (a[(y + 1, xx)] - a[(y - 1, xx)]) / 8.0;
            }
            assert!((g[(y, x)] - gx.hypot(gy)).abs() < 1e-12);
        }
    }
}

fn ssim_oracle(x: &Array2<f64>, y: &Array2<f64>, k: usize) -> f64 {
    let lo = x.iter().chain(y.iter()).copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().chain(y.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    let c1 = (0.01 * (hi - lo)).powi(2);
    let c2 = (0.03 * (hi - lo)).powi(2);
    let (h, w) = x.dim();
    let mut total = 0.0;
    let mut count = 0.0;
    for i in 0..=h - k {
        for j in 0..=w - k {
            let xs = x.slice(s![i..i + k, j..j + k]);
            let ys = y.slice(s![i..i + k, j..j + k]);
            let n = (k * k) as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|v| v * v).sum::<f64>() / n - mx * mx;
            let vy = ys.iter().map(|v| v * v).sum::<f64>() / n - my * my;
            let cxy = xs.iter().zip(ys.iter()).map(|(a, b)| a * b).sum::<f64>() / n - mx * my;
            // With c3 = c2/2 the three-term product collapses to the
            // two-term form.
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

#[test]
fn ssim_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = noise(&mut rng, 14, 12);
    let y = &x * 0.7 + &noise(&mut rng, 14, 12) * 0.5;
    let got = ssim_mean(&grid(x.clone()), &grid(y.clone()), &SsimConfig::default()).unwrap();
    assert!((got - ssim_oracle(&x, &y, 7)).abs() < 1e-10);
}

#[test]
fn ssim_identity_and_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = grid(noise(&mut rng, 10, 10).mapv(|v| v + 300.0));
    assert_eq!(ssim_mean(&x, &x, &SsimConfig::default()).unwrap(), 1.0);
    let shifted = x.map_valid(|v| v + 50.0).unwrap();
    assert!(ssim_mean(&shifted, &x, &SsimConfig::default()).unwrap() < 1.0);
}

#[test]
fn ssim_rejects_small_images_and_even_windows() {
    let x = Grid2D::constant(5, 5, 1.0, 1.0).unwrap();
    assert!(ssim_mean(&x, &x, &SsimConfig::default()).is_err());
    let cfg = SsimConfig {
        window: 4,
        ..SsimConfig::default()
    };
    assert!(ssim_mean(&x, &x, &cfg).is_err());
}

#[test]
fn constant_image_has_dc_only_spectrum() {
    let g = Grid2D::constant(16, 16, -3.0, 1.0).unwrap();
    let sp = radial_spectrum(&g).unwrap();
    assert!((sp.magnitude[0] - 256.0 * 3.0).abs() < 1e-9);
    assert!(sp.magnitude[1..].iter().all(|m| m.abs() < 1e-9));
    assert_eq!(sp.counts[0], 1);
    assert_eq!(sp.counts.iter().sum::<usize>(), 256);
}

#[test]
fn sinusoid_energy_sits_in_its_ring() {
    let n = 32;
    let k0 = 5.0;
    let img = Array2::from_shape_fn((n, n), |(_, x)| {
        (std::f64::consts::TAU * k0 * x as f64 / n as f64).cos() + 2.0
    });
    let sp = radial_spectrum(&grid(img)).unwrap();
    for (k, m) in sp.magnitude.iter().enumerate() {
        if k == 0 || k == 5 {
            assert!(*m > 1.0);
        } else {
            assert!(m.abs() < 1e-9, "ring {k}: {m}");
        }
    }
    assert!((sp.nu[5] - 5.0 / 32.0).abs() < 1e-15);
}

#[test]
fn spectra_reject_masked_or_rectangular_images() {
    let mut mask = Array2::from_elem((8, 8), true);
    mask[(1, 1)] = false;
    let g = Grid2D::with_mask(Array2::ones((8, 8)), mask, 1.0).unwrap();
    assert!(radial_spectrum(&g).is_err());
    assert!(radial_spectrum(&Grid2D::constant(8, 6, 1.0, 1.0).unwrap()).is_err());
    assert_eq!(center_square(&Grid2D::constant(8, 6, 1.0, 1.0).unwrap()).unwrap().dim(), (6, 6));
}

#[test]
fn attenuation_is_zero_at_dc_and_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = grid(noise(&mut rng, 32, 32).mapv(|v| v + 5.0));
    let a = image_attenuation(&img).unwrap();
    assert_eq!(a.db[0], 0.0);
    let b = image_attenuation(&img.map_valid(|v| 3.7 * v).unwrap()).unwrap();
    for (x, y) in a.db.iter().zip(&b.db) {
        assert!((x - y).abs() < 1e-9);
    }
    assert_eq!(a.nu_per_m()[1], a.nu[1] / 100.0);
}

#[test]
fn attenuation_rejects_zero_dc() {
    let g = Grid2D::constant(8, 8, 0.0, 1.0).unwrap();
    assert!(image_attenuation(&g).is_err());
}

#[test]
fn gaussian_filtering_shifts_attenuation_by_the_kernel_response() {
    // Circularly filtered white noise: each Fourier magnitude is scaled by
    // the kernel's transfer function, so the ring curve shifts by
    // 10·log10 of the (continuous) Gaussian response.
    let n = 128;
    let sigma: f64 = 1.0;
    let radius = 4isize;
    let taps: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let (mut raw_db, mut filt_db) = (vec![0.0; n], vec![0.0; n]);
    let reps = 8;
    for seed in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = noise(&mut rng, n, n).mapv(|v| v + 10.0);
        let wrap = |i: isize| i.rem_euclid(n as isize) as usize;
        let rows = Array2::from_shape_fn((n, n), |(y, c)| {
            (-radius..=radius).map(|k| taps[(k + radius) as usize] * x[(y, wrap(c as isize + k))]).sum::<f64>()
        });
        let f = Array2::from_shape_fn((n, n), |(y, c)| {
            (-radius..=radius).map(|k| taps[(k + radius) as usize] * rows[(wrap(y as isize + k), c)]).sum::<f64>()
        });
        let a = image_attenuation(&grid(x)).unwrap();
        let b = image_attenuation(&grid(f)).unwrap();
        for k in 0..n {
            if k < a.db.len() {
                raw_db[k] += a.db[k] / reps as f64;
                filt_db[k] += b.db[k] / reps as f64;
            }
        }
    }
    for k in 2..n / 4 {
        let nu = (k as f64 + 0.5) / n as f64;
        let response = (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * nu * nu).exp();
        let want = raw_db[k] + 10.0 * response.log10();
        assert!((filt_db[k] - want).abs() < 0.3, "ring {k}: {} vs {want}", filt_db[k]);
    }
}

#[test]
fn attenuation_rmse_values() {
    let a = curve(vec![0.0, -3.0, -5.0, -9.0]);
    let b = curve(vec![0.0, -2.0, -4.0, -8.0]);
    assert_eq!(rmse_attenuation(&a, &a).unwrap(), 0.0);
    assert!((rmse_attenuation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(rmse_attenuation(&a, &b).unwrap(), rmse_attenuation(&b, &a).unwrap());
    let c = curve(vec![0.0, -1.0, -5.0, -12.0]);
    let want = ((4.0 + 0.0 + 9.0) / 3.0f64).sqrt();
    assert!((rmse_attenuation(&a, &c).unwrap() - want).abs() < 1e-12);
}

#[test]
fn frr_fro_identities() {
    let bic = curve(vec![0.0, -10.0, -20.0, -30.0, -40.0]);
    let reference = curve(vec![0.0, -8.0, -15.0, -22.0, -28.0]);
    assert_eq!(frr(&bic, &reference, &bic).unwrap(), 0.0);
    assert_eq!(fro(&bic, &reference, &bic).unwrap(), 0.0);
    assert_eq!(frr(&reference, &reference, &bic).unwrap(), 1.0);
    assert_eq!(fro(&reference, &reference, &bic).unwrap(), 0.0);
    let over = curve(vec![0.0, -5.0, -10.0, -15.0, -20.0]);
    assert_eq!(frr(&over, &reference, &bic).unwrap(), 1.0);
}

#[test]
fn fro_counts_uniform_overshoot() {
    let bic = curve(vec![0.0, -10.0, -20.0, -30.0, -40.0]);
    let reference = curve(vec![0.0, -8.0, -15.0, -22.0, -28.0]);
    let den = 2.0 + 5.0 + 8.0 + 12.0;
    let over = curve(vec![0.0, -7.0, -14.0, -21.0, -27.0]);
    assert!((fro(&over, &reference, &bic).unwrap() - 4.0 / den).abs() < 1e-12);
    let half = curve(vec![0.0, -9.0, -17.5, -26.0, -34.0]);
    assert!((frr(&half, &reference, &bic).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn frr_rejects_reference_no_sharper_than_bicubic() {
    let a = curve(vec![0.0, -10.0, -20.0]);
    assert!(frr(&a, &a, &a).is_err());
    assert!(fro(&a, &a, &a).is_err());
    assert!(frr(&a, &curve(vec![0.0, -1.0]), &a).is_err());
}

proptest! {
    #[test]
    fn frr_is_a_rate_and_fro_nonnegative(
        bic in prop::collection::vec(-60.0f64..0.0, 6),
        lift in prop::collection::vec(0.1f64..20.0, 6),
        sr in prop::collection::vec(-70.0f64..5.0, 6),
    ) {
        let mut b = vec![0.0];
        b.extend(&bic);
        let r: Vec<f64> = b.iter().zip(std::iter::once(&0.0).chain(&lift)).map(|(x, l)| x + l).collect();
        let mut s = vec![0.0];
        s.extend(&sr);
        let (b, r, s) = (curve(b), curve(r), curve(s));
        let v = frr(&s, &r, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(fro(&s, &r, &b).unwrap() >= 0.0);
        prop_assert_eq!(frr(&b, &r, &b).unwrap(), 0.0);
        prop_assert_eq!(fro(&b, &r, &b).unwrap(), 0.0);
        prop_assert_eq!(frr(&r, &r, &b).unwrap(), 1.0);
        prop_assert_eq!(fro(&r, &r, &b).unwrap(), 0.0);
    }
}

#[test]
fn mean_attenuation_averages_ringwise() {
    let m = mean_attenuation(&[curve(vec![0.0, -2.0]), curve(vec![0.0, -4.0])]).unwrap();
    assert_eq!(m.db, vec![0.0, -3.0]);
    assert!(mean_attenuation(&[]).is_err());
}

#[test]
fn scene_metrics_for_reference_and_bicubic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let reference = grid(noise(&mut rng, 32, 32).mapv(|v| v + 300.0));
    let smooth = Array2::from_shape_fn((32, 32), |(y, x)| {
        let mut acc = 0.0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let yy = (y as isize + dy).clamp(0, 31) as usize;
                let xx = (x as isize + dx).clamp(0, 31) as usize;
                acc += reference.values()[(yy, xx)];
            }
        }
        acc / 9.0
    });
    let bic = grid(smooth);
    let r = evaluate_scene(&reference, &reference, &bic).unwrap();
    assert_eq!((r.rmse, r.rmse_q75, r.ssim), (0.0, 0.0, 1.0));
    assert_eq!((r.frr, r.fro, r.rmse_f), (Some(1.0), Some(0.0), Some(0.0)));
    let b = evaluate_scene(&bic, &reference, &bic).unwrap();
    assert_eq!((b.frr, b.fro), (Some(0.0), Some(0.0)));
}

#[test]
fn spectra_csv_has_expected_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spectra.csv");
    let mut c = curve(vec![0.0, -1.5]);
    c.pixel_size = 250.0;
    write_spectra_csv(&[("bicubic".to_string(), c)], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,nu_cycles_per_px,nu_per_m,dB");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("bicubic,0.062500,0.000250000,-1.5"));
}
