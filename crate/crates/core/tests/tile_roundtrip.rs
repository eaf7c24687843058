//! Window-lattice coverage and exact stitch round trips on random rasters.

use corallite_core::tiler::{plan_grid, stitch, stitch_values};
use corallite_core::Grid;
use proptest::prelude::*;

fn lattice_strategy() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    // (height, width, tile, step) with tile <= min(h, w), 1 <= step <= tile
    (8usize..=96, 8usize..=96)
        .prop_flat_map(|(h, w)| {
            let max_tile = h.min(w);
            (Just(h), Just(w), 2usize..=max_tile)
        })
        .prop_flat_map(|(h, w, tile)| (Just(h), Just(w), Just(tile), 1usize..=tile))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(192))]

    #[test]
    fn lattice_covers_every_pixel_and_stays_in_bounds(
        (h, w, tile, step) in lattice_strategy(),
    ) {
        let grid = plan_grid(h, w, tile, step).unwrap();
        prop_assert_eq!(grid.row_origins.first(), Some(&0));
        prop_assert_eq!(grid.col_origins.first(), Some(&0));
        prop_assert_eq!(grid.row_origins.last(), Some(&(h - tile)));
        prop_assert_eq!(grid.col_origins.last(), Some(&(w - tile)));
        for axis in [&grid.row_origins, &grid.col_origins] {
            for pair in axis.windows(2) {
                prop_assert!(pair[0] < pair[1]);
                prop_assert!(pair[1] - pair[0] <= step);
            }
        }
        // Row coverage: consecutive origins at most `step <= tile` apart,
        // so the union of [o, o + tile) intervals is gapless.
        let mut covered_to = 0usize;
        for &o in &grid.row_origins {
            prop_assert!(o <= covered_to);
            covered_to = covered_to.max(o + tile);
        }
        prop_assert_eq!(covered_to, h);
    }

    #[test]
    fn mask_survives_tile_and_stitch_bit_for_bit(
        (h, w, tile, step) in lattice_strategy(),
        seed in any::<u64>(),
    ) {
        // Cheap deterministic mask from the seed.
        let mask = Grid::from_vec(
            h,
            w,
            (0..h * w)
                .map(|i| (i as u64).wrapping_mul(seed | 1).rotate_left(17) % 3 == 0)
                .collect(),
        );
        let grid = plan_grid(h, w, tile, step).unwrap();
        let tiles: Vec<((usize, usize), Grid<f64>)> = grid
            .origins()
            .into_iter()
            .map(|(r, c)| {
                let crop = mask.crop(r, c, tile, tile);
                ((r, c), crop.map(|&v| if v { 1.0 } else { 0.0 }))
            })
            .collect();
        let restored = stitch::<f64>(&tiles, h, w, 0).unwrap();
        prop_assert_eq!(restored.raster, mask);
    }

    #[test]
    fn agreeing_probability_tiles_stitch_exactly(
        (h, w, tile, step) in lattice_strategy(),
        seed in any::<u64>(),
    ) {
        // Values like 0.1 are not exactly representable; the agreement
        // short-circuit must still return them unchanged.
        let probs = Grid::from_vec(
            h,
            w,
            (0..h * w)
                .map(|i| {
                    let x = (i as u64).wrapping_mul(seed | 1).rotate_left(23);
                    (x % 1000) as f64 / 999.0
                })
                .collect(),
        );
        let grid = plan_grid(h, w, tile, step).unwrap();
        let tiles: Vec<((usize, usize), Grid<f64>)> = grid
            .origins()
            .into_iter()
            .map(|(r, c)| ((r, c), probs.crop(r, c, tile, tile)))
            .collect();
        let restored = stitch_values::<f64>(&tiles, h, w).unwrap();
        prop_assert_eq!(restored, probs);
    }
}
