//! Uniform tensor-product grids and interior-node fields.
//!
//! Fields only store the `(N_1 - 1) x ... x (N_d - 1)` interior nodes; the
//! homogeneous Dirichlet boundary is implicit. Storage is row-major with the
//! last axis contiguous.

use ndarray::{Array2, ArrayD, Axis as NdAxis, Dimension, IxDyn, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One coordinate direction of a [`Grid`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    /// Number of intervals `N_k`.
    pub intervals: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.intervals as f64
    }

    /// Number of interior nodes, `N_k - 1`.
    pub fn interior(&self) -> usize {
        self.intervals - 1
    }

    /// Coordinate of interior node `i` (zero based, so node `i` sits at
    /// `lower + (i + 1) h`).
    pub fn node(&self, i: usize) -> f64 {
        self.lower + (i + 1) as f64 * self.spacing()
    }
}

/// A uniform grid on a box `(a_1, b_1) x ... x (a_d, b_d)` with `d <= 3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    /// Builds a grid from per-axis bounds and interval counts.
    pub fn new(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        let d = bounds.len();
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1, 2 or 3, got {d}"
            )));
        }
        if counts.len() != d {
            return Err(Error::InvalidGrid(format!(
                "{d} bounds but {} interval counts",
                counts.len()
            )));
        }
        let mut axes = Vec::with_capacity(d);
        for (k, (&(lower, upper), &intervals)) in bounds.iter().zip(counts).enumerate() {
            if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: bounds ({lower}, {upper}) are degenerate"
                )));
            }
            if intervals < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: need at least 2 intervals, got {intervals}"
                )));
            }
            axes.push(Axis {
                lower,
                upper,
                intervals,
            });
        }
        Ok(Grid { axes })
    }

    /// Same as [`Grid::new`] but checks the dimension argument explicitly.
    pub fn with_dim(d: usize, bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        if bounds.len() != d {
            return Err(Error::InvalidGrid(format!(
                "dimension {d} does not match {} bounds",
                bounds.len()
            )));
        }
        Self::new(bounds, counts)
    }

    /// The unit cube `(0, 1)^d` with `n` intervals per axis.
    pub fn unit(d: usize, n: usize) -> Result<Self> {
        Self::new(&vec![(0.0, 1.0); d], &vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }

    /// Product of the mesh sizes, the volume attached to one node.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    pub fn interior_shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::interior).collect()
    }

    /// Total number of interior nodes.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::interior).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest interval count over all axes.
    pub fn max_intervals(&self) -> usize {
        self.axes.iter().map(|a| a.intervals).max().unwrap_or(0)
    }

    /// Interior node coordinates along axis `k`.
    pub fn nodes(&self, k: usize) -> Vec<f64> {
        let axis = &self.axes[k];
        (0..axis.interior()).map(|i| axis.node(i)).collect()
    }

    /// Writes the coordinates of the node with multi-index `idx` into `x`.
    pub fn coordinates_into(&self, idx: &[usize], x: &mut [f64]) {
        for ((xk, &i), axis) in x.iter_mut().zip(idx).zip(&self.axes) {
            *xk = axis.node(i);
        }
    }
}

/// Nodal values on the interior of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    grid: Grid,
    values: ArrayD<f64>,
}

impl TensorField {
    pub fn zeros(grid: &Grid) -> Self {
        TensorField {
            grid: grid.clone(),
            values: ArrayD::zeros(IxDyn(&grid.interior_shape())),
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        TensorField {
            grid: grid.clone(),
            values: ArrayD::from_elem(IxDyn(&grid.interior_shape()), value),
        }
    }

    /// Wraps an existing array; its shape must be the grid's interior shape.
    pub fn from_array(grid: &Grid, values: ArrayD<f64>) -> Result<Self> {
        let expected = grid.interior_shape();
        if values.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                expected,
                found: values.shape().to_vec(),
            });
        }
        Ok(TensorField {
            grid: grid.clone(),
            values: values.as_standard_layout().into_owned(),
        })
    }

    /// Row-major flat values.
    pub fn from_vec(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        let shape = grid.interior_shape();
        let array = ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|_| {
            Error::ShapeMismatch {
                expected: vec![grid.len()],
                found: vec![],
            }
        })?;
        Ok(TensorField {
            grid: grid.clone(),
            values: array,
        })
    }

    /// Samples `f` at every interior node.
    pub fn from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut x = vec![0.0; grid.dim()];
        let values = ArrayD::from_shape_fn(IxDyn(&grid.interior_shape()), |idx| {
            grid.coordinates_into(idx.slice(), &mut x);
            f(&x)
        });
        TensorField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &ArrayD<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> ArrayD<f64> {
        self.values
    }

    /// Contiguous row-major view of the data.
    pub fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("fields are kept in standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.values
            .as_slice_mut()
            .expect("fields are kept in standard layout")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, shape: &[usize]) -> Result<()> {
        if self.values.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                found: self.values.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `self + factor * other`.
    pub fn axpy(&self, factor: f64, other: &TensorField) -> Result<TensorField> {
        other.check_same_shape(self.shape())?;
        let mut out = self.clone();
        Zip::from(&mut out.values)
            .and(&other.values)
            .for_each(|a, &b| *a += factor * b);
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            values: self.values.mapv(|v| v * factor),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            values: self.values.mapv(f),
        }
    }

    /// Unweighted Euclidean inner product over the interior nodes.
    pub fn dot(&self, other: &TensorField) -> Result<f64> {
        other.check_same_shape(self.shape())?;
        Ok(self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum())
    }

    /// `sqrt(prod h_k * sum e^2)`.
    pub fn l2_norm(&self) -> f64 {
        discrete_l2_norm(self)
    }

    pub fn max_norm(&self) -> f64 {
        discrete_max_norm(self)
    }
}

/// Applies `w` along axis `axis`:
/// `out[.., i, ..] = sum_j w[i, j] r[.., j, ..]`.
pub fn mode_apply(w: &Array2<f64>, r: &TensorField, axis: usize) -> Result<TensorField> {
    if axis >= r.grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "axis {axis} out of range for a {}-d field",
            r.grid.dim()
        )));
    }
    let n = r.shape()[axis];
    if w.shape() != [n, n] {
        return Err(Error::ShapeMismatch {
            expected: vec![n, n],
            found: w.shape().to_vec(),
        });
    }
    let mut out = TensorField::zeros(&r.grid);
    Zip::from(out.values.lanes_mut(NdAxis(axis)))
        .and(r.values.lanes(NdAxis(axis)))
        .for_each(|mut dst, src| {
            dst.assign(&w.dot(&src));
        });
    Ok(out)
}

/// Entrywise product `a ⊙ r`.
pub fn hadamard(a: &ArrayD<f64>, r: &TensorField) -> Result<TensorField> {
    r.check_same_shape(a.shape())?;
    let mut out = r.clone();
    Zip::from(&mut out.values).and(a).for_each(|v, &m| *v *= m);
    Ok(out)
}

pub fn discrete_l2_norm(e: &TensorField) -> f64 {
    let sum: f64 = e.values.iter().map(|v| v * v).sum();
    (e.grid.cell_volume() * sum).sqrt()
}

pub fn discrete_max_norm(e: &TensorField) -> f64 {
    e.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
