use ndarray::Array2;
use proptest::prelude::*;
use tempfile::TempDir;

use sifsr_core::raster::{block_mean, load_raster, replicate, save_raster, Grid2D};

fn field(h: usize, w: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.0e4f32..1.0e4, h * w)
        .prop_map(move |v| Array2::from_shape_vec((h, w), v.into_iter().map(f64::from).collect()).unwrap())
}

fn masked_grid() -> impl Strategy<Value = Grid2D> {
    (1usize..12, 1usize..12, 1.0f64..5000.0).prop_flat_map(|(h, w, ps)| {
        (field(h, w), prop::collection::vec(prop::bool::weighted(0.85), h * w)).prop_map(move |(v, m)| {
            let mask = Array2::from_shape_vec((h, w), m).unwrap();
            Grid2D::with_mask(v, mask, ps).unwrap().with_units("K")
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn save_load_is_the_identity(grid in masked_grid()) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("g.f32");
        save_raster(&grid, &path).unwrap();
        let back = load_raster(&path).unwrap();
        prop_assert_eq!(back, grid);
    }

    #[test]
    fn block_mean_is_linear(
        (x, y) in (1usize..5, 1usize..5).prop_flat_map(|(h, w)| (field(3 * h, 3 * w), field(3 * h, 3 * w))),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let gx = Grid2D::new(x.clone(), 10.0).unwrap();
        let gy = Grid2D::new(y.clone(), 10.0).unwrap();
        let combo = Grid2D::new(&x * a + &y * b, 10.0).unwrap();
        let lhs = block_mean(&combo, 3).unwrap();
        let rhs = &block_mean(&gx, 3).unwrap().values() * a + &block_mean(&gy, 3).unwrap().values() * b;
        for (l, r) in lhs.values().iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() <= 1e-9 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn block_mean_inverts_replication(x in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| field(h, w)), r in 1usize..5) {
        let g = Grid2D::new(x, 1000.0).unwrap();
        let back = block_mean(&replicate(&g, r).unwrap(), r).unwrap();
        prop_assert_eq!(back.values(), g.values());
        prop_assert_eq!(back.pixel_size(), g.pixel_size());
    }
}
