//! Seeded inputs shared by the benchmarks.

use std::collections::BTreeSet;

use dyadic_core::dyadic::Cell;
use dyadic_core::{DyadicCube, GridFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` random positive cells on the unit square at `resolution`.
pub fn random_square(seed: u64, resolution: i32, count: usize) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 1i64 << resolution;
    let cells: Vec<(Cell, f64)> = (0..count)
        .map(|_| {
            (
                vec![rng.gen_range(0..side), rng.gen_range(0..side)],
                rng.gen_range(0.25..4.0),
            )
        })
        .collect();
    GridFunction::from_cells(DyadicCube::unit(2), resolution, cells).expect("cells inside the root")
}

/// A union of `rects` random rectangles in a `side × side` cell grid.
pub fn random_open_set(seed: u64, side: i64, rects: usize) -> BTreeSet<Cell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = BTreeSet::new();
    for _ in 0..rects {
        let (x, y) = (rng.gen_range(0..side), rng.gen_range(0..side));
        let (wx, wy) = (rng.gen_range(1..side / 3), rng.gen_range(1..side / 3));
        for cx in x..(x + wx).min(side) {
            for cy in y..(y + wy).min(side) {
                omega.insert(vec![cx, cy]);
            }
        }
    }
    omega
}
