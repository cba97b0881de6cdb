use ndarray::Array2;
use proptest::prelude::*;

use sifsr_core::datagen::{synth_scene, SynthConfig};
use sifsr_core::objective::{huber_mean, reconstruction_loss, sif_loss, texture_loss, SifConfig};
use sifsr_core::raster::{Grid2D, NormStats};

fn grid(values: Vec<f64>, h: usize, w: usize) -> Grid2D {
    Grid2D::new(Array2::from_shape_vec((h, w), values).unwrap(), 1.0).unwrap()
}

fn pair_of_fields() -> impl Strategy<Value = (Grid2D, Grid2D)> {
    (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(-5.0f64..5.0, h * w),
            prop::collection::vec(-5.0f64..5.0, h * w),
        )
            .prop_map(move |(a, b)| (grid(a, h, w), grid(b, h, w)))
    })
}

fn scene_config() -> impl Strategy<Value = SifConfig> {
    (0.0f64..=1.0, -1.0f64..1.0, prop::bool::ANY).prop_map(|(alpha, gamma, sobel)| {
        let base = if sobel { SifConfig::sif1(4) } else { SifConfig::sif2(4) };
        SifConfig { alpha, gamma, ..base }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn huber_mean_is_symmetric((a, b) in pair_of_fields(), delta in 0.05f64..3.0) {
        prop_assert_eq!(huber_mean(&a, &b, delta).unwrap(), huber_mean(&b, &a, delta).unwrap());
    }

    #[test]
    fn huber_mean_tends_to_half_mse((a, b) in pair_of_fields()) {
        let n = a.valid_count() as f64;
        let mse = (&a.values() - &b.values()).mapv(|d| d * d).sum() / n;
        let h = huber_mean(&a, &b, 1e6).unwrap();
        prop_assert!((h - 0.5 * mse).abs() <= 1e-6 * (0.5 * mse).max(1e-300));
    }

    #[test]
    fn total_is_the_convex_combination(cfg in scene_config(), seed in 0u64..50, shift in -3.0f64..3.0) {
        let t = synth_scene(&SynthConfig { hr_size: 32, ..SynthConfig::with_seed(seed) }).unwrap();
        let stats = NormStats::from_pairs([t.pair()]).unwrap();
        let cand = t.ref_hr().map_valid(|v| v + shift).unwrap();
        let l = sif_loss(&cand, t.pair(), &stats, &cfg).unwrap();
        let expected = cfg.alpha * l.texture_term + (1.0 - cfg.alpha) * l.rec_term;
        prop_assert!((l.total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn texture_ignores_constants_but_reconstruction_does_not(
        cfg in scene_config(),
        seed in 0u64..50,
        shift in prop::sample::select(vec![-2.0f64, -0.5, 0.25, 1.5]),
    ) {
        let t = synth_scene(&SynthConfig { hr_size: 32, ..SynthConfig::with_seed(seed) }).unwrap();
        let cand = t.ref_hr().map_valid(|v| (v - 300.0) / 3.0).unwrap();
        let moved = cand.map_valid(|v| v + shift).unwrap();
        let ndvi = t.pair().ndvi_hr();
        let (a, b) = (texture_loss(&cand, ndvi, &cfg).unwrap(), texture_loss(&moved, ndvi, &cfg).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        let lst = t.pair().lst_lr().map_valid(|v| (v - 300.0) / 3.0).unwrap();
        prop_assert!(reconstruction_loss(&cand, &lst, &cfg).unwrap() != reconstruction_loss(&moved, &lst, &cfg).unwrap());
    }
}
