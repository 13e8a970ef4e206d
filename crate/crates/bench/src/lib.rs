//! Shared inputs for the criterion benches.

use std::f64::consts::PI;

use sfl_core::{Grid, TensorField};

/// Unit square grid with `n` intervals per axis.
pub fn square(n: usize) -> Grid {
    Grid::unit(2, n).expect("valid grid")
}

/// Smooth nonzero field on `grid`.
pub fn bump(grid: &Grid) -> TensorField {
    TensorField::from_fn(grid, |x| x.iter().map(|&xi| (PI * xi).sin() * (1.0 + xi)).product())
}
