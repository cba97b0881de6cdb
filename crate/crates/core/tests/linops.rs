use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sifsr_core::linops::{adjoint_of, highpass, mtf_degrade, sobel_directional, GaussianKernel};
use sifsr_core::raster::Grid2D;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_operators_are_adjoint(
        seed in any::<u64>(),
        kind in 0usize..6,
        sigma in 0.5f64..3.0,
        factor in 2usize..5,
        n in 2usize..5,
    ) {
        let (desc, dim) = match kind {
            0 => (format!("gaussian_conv:{sigma}"), (4 * n + 1, 3 * n)),
            1 => (format!("bicubic_down:{factor}"), (factor * n, factor * (n + 1))),
            2 => (format!("bicubic_up:{factor}"), (n, n + 2)),
            3 => (format!("sobel_{}", n % 4), (n + 3, n + 4)),
            4 => (format!("highpass:{sigma}"), (3 * n, 3 * n)),
            _ => (format!("observation:{factor}:{sigma}"), (factor * n, factor * n)),
        };
        let op = adjoint_of(&desc, dim).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let err = op.dot_product_test(&mut rng).unwrap();
            prop_assert!(err < 1e-10, "{}: {}", desc, err);
        }
    }

    #[test]
    fn mtf_degrade_preserves_constants(c in -400.0f64..400.0, r in 1usize..6, n in 2usize..6, sigma in 0.3f64..4.0) {
        let g = Grid2D::constant(r * n, r * (n + 1), c, 30.0).unwrap();
        let lr = mtf_degrade(&g, r, sigma).unwrap();
        prop_assert!(lr.valid_values().all(|v| (v - c).abs() <= 1e-9 * c.abs().max(1.0)));
    }

    #[test]
    fn sobel_and_highpass_annihilate_constants(c in -400.0f64..400.0, h in 3usize..12, w in 3usize..12, sigma in 0.3f64..3.0) {
        let g = Grid2D::constant(w, h, c, 1.0).unwrap();
        for resp in sobel_directional(&g).unwrap() {
            prop_assert!(resp.valid_values().all(|v| v.abs() <= 1e-12 * c.abs().max(1.0)));
        }
        let k = GaussianKernel::with_default_radius(sigma).unwrap();
        let hp = highpass(&g, &k).unwrap();
        prop_assert!(hp.valid_values().all(|v| v.abs() <= 1e-12 * c.abs().max(1.0)));
    }
}

#[test]
fn unknown_descriptor_is_rejected() {
    for bad in ["laplace", "sobel_4", "gaussian_conv:x", ""] {
        assert!(adjoint_of(bad, (4, 4)).is_err(), "{bad}");
    }
    let e = adjoint_of("laplace", (4, 4)).unwrap_err();
    assert!(e.is_config());
}
