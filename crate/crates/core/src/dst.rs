//! Type-I discrete sine transform.
//!
//! The forward transform is the unnormalized sum
//! `y_i = sum_j sin(i j pi / N) x_j` for `i, j = 1..N-1`, i.e. multiplication
//! by the symmetric sine matrix `P`. Since `P^2 = (N / 2) I`, the inverse is
//! `(2 / N) P`.
//!
//! The fast path embeds each pencil into an odd sequence of length `2N` and
//! runs one complex FFT. Two real pencils share one FFT: the transform of an
//! odd real sequence is purely imaginary, so packing the second pencil into
//! the imaginary part lets both be read back from the real and imaginary
//! parts of the same output.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayD};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Grid, TensorField};

/// Below this many values a transform runs on the calling thread.
const PARALLEL_THRESHOLD: usize = 1 << 14;

/// One-dimensional DST-I for a fixed number of intervals `N`.
#[derive(Clone)]
pub struct Dst1 {
    intervals: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dst1 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dst1")
            .field("intervals", &self.intervals)
            .finish()
    }
}

struct Workspace {
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Dst1 {
    pub fn new(intervals: usize) -> Result<Self> {
        Self::with_planner(intervals, &mut FftPlanner::new())
    }

    fn with_planner(intervals: usize, planner: &mut FftPlanner<f64>) -> Result<Self> {
        if intervals < 2 {
            return Err(Error::InvalidParameter(format!(
                "DST-I needs at least 2 intervals, got {intervals}"
            )));
        }
        Ok(Dst1 {
            intervals,
            fft: planner.plan_fft_forward(2 * intervals),
        })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Length of the vectors this transform acts on, `N - 1`.
    pub fn len(&self) -> usize {
        self.intervals - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalization carried by the inverse transform.
    pub fn inverse_scale(&self) -> f64 {
        2.0 / self.intervals as f64
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            buffer: vec![Complex::new(0.0, 0.0); 2 * self.intervals],
            scratch: vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()],
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.len()],
                found: vec![len],
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut out = x.to_vec();
        self.transform_rows(&mut out, 1.0);
        Ok(out)
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len())?;
        let mut out = y.to_vec();
        self.transform_rows(&mut out, self.inverse_scale());
        Ok(out)
    }

    /// Transforms every contiguous row of length `N - 1` in `data` in place and
    /// multiplies the result by `scale`.
    pub(crate) fn transform_rows(&self, data: &mut [f64], scale: f64) {
        let n = self.len();
        debug_assert_eq!(data.len() % n, 0);
        if data.len() >= PARALLEL_THRESHOLD && data.len() > 2 * n {
            data.par_chunks_mut(2 * n)
                .for_each_init(|| self.workspace(), |ws, rows| self.pair(ws, rows, scale));
        } else {
            let mut ws = self.workspace();
            for rows in data.chunks_mut(2 * n) {
                self.pair(&mut ws, rows, scale);
            }
        }
    }

    /// Transforms one or two rows stored back to back in `rows`.
    fn pair(&self, ws: &mut Workspace, rows: &mut [f64], scale: f64) {
        let n = self.len();
        let big_n = self.intervals;
        let (x, y) = rows.split_at_mut(n.min(rows.len()));
        let two_rows = !y.is_empty();

        let buf = &mut ws.buffer;
        buf[0] = Complex::new(0.0, 0.0);
        buf[big_n] = Complex::new(0.0, 0.0);
        for j in 1..big_n {
            let v = Complex::new(x[j - 1], if two_rows { y[j - 1] } else { 0.0 });
            buf[j] = v;
            buf[2 * big_n - j] = -v;
        }
        self.fft.process_with_scratch(buf, &mut ws.scratch);

        let half = 0.5 * scale;
        for k in 1..big_n {
            x[k - 1] = -buf[k].im * half;
        }
        if two_rows {
            for k in 1..big_n {
                y[k - 1] = buf[k].re * half;
            }
        }
    }
}

/// Forward DST-I of `x`, with `N = x.len() + 1`.
pub fn dst_1d(x: &[f64]) -> Result<Vec<f64>> {
    Dst1::new(x.len() + 1)?.forward(x)
}

/// Inverse DST-I, `(2 / N) dst_1d(y)`.
pub fn idst_1d(y: &[f64]) -> Result<Vec<f64>> {
    Dst1::new(y.len() + 1)?.inverse(y)
}

/// The dense sine matrix `P_ij = sin(i j pi / N)`, `i, j = 1..N-1`.
pub fn sine_matrix(intervals: usize) -> Array2<f64> {
    let n = intervals - 1;
    Array2::from_shape_fn((n, n), |(i, j)| {
        (((i + 1) * (j + 1)) as f64 * PI / intervals as f64).sin()
    })
}

/// Quadratic-time reference for [`dst_1d`].
pub fn dst_1d_dense(x: &[f64]) -> Vec<f64> {
    let intervals = x.len() + 1;
    (1..intervals)
        .map(|i| {
            x.iter()
                .enumerate()
                .map(|(j, v)| ((i * (j + 1)) as f64 * PI / intervals as f64).sin() * v)
                .sum()
        })
        .collect()
}

/// Reusable d-dimensional DST-I / iDST-I for one interior shape.
#[derive(Clone, Debug)]
pub struct DstPlan {
    shape: Vec<usize>,
    axes: Vec<Dst1>,
    dense: Option<Vec<Array2<f64>>>,
}

impl DstPlan {
    /// Plan for fields with the given interior shape (`N_k - 1` per axis).
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter(format!(
                "cannot plan a DST for shape {shape:?}"
            )));
        }
        let mut planner = FftPlanner::new();
        let axes = shape
            .iter()
            .map(|&n| Dst1::with_planner(n + 1, &mut planner))
            .collect::<Result<Vec<_>>>()?;
        Ok(DstPlan {
            shape: shape.to_vec(),
            axes,
            dense: None,
        })
    }

    pub fn for_grid(grid: &Grid) -> Result<Self> {
        Self::new(&grid.interior_shape())
    }

    /// Plan that multiplies by explicit sine matrices, `O(N^2)` per pencil.
    /// Kept as a reference path for testing.
    pub fn dense(shape: &[usize]) -> Result<Self> {
        let mut plan = Self::new(shape)?;
        plan.dense = Some(shape.iter().map(|&n| sine_matrix(n + 1)).collect());
        Ok(plan)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    fn check(&self, r: &TensorField) -> Result<()> {
        r.check_same_shape(&self.shape)
    }

    pub fn forward(&self, r: &TensorField) -> Result<TensorField> {
        self.check(r)?;
        let mut out = r.clone();
        self.forward_in_place(out.values_mut());
        Ok(out)
    }

    pub fn inverse(&self, r: &TensorField) -> Result<TensorField> {
        self.check(r)?;
        let mut out = r.clone();
        self.inverse_in_place(out.values_mut());
        Ok(out)
    }

    /// In-place forward transform of an array with this plan's shape.
    pub fn forward_in_place(&self, values: &mut ArrayD<f64>) {
        for k in 0..self.axes.len() {
            self.apply_axis(values, k, 1.0);
        }
    }

    pub fn inverse_in_place(&self, values: &mut ArrayD<f64>) {
        for k in 0..self.axes.len() {
            let scale = self.axes[k].inverse_scale();
            self.apply_axis(values, k, scale);
        }
    }

    fn apply_axis(&self, values: &mut ArrayD<f64>, axis: usize, scale: f64) {
        debug_assert_eq!(values.shape(), self.shape.as_slice());
        if let Some(mats) = &self.dense {
            let p = &mats[axis];
            ndarray::Zip::from(values.lanes_mut(ndarray::Axis(axis))).for_each(|mut lane| {
                let y = p.dot(&lane) * scale;
                lane.assign(&y);
            });
            return;
        }
        let last = values.ndim() - 1;
        let dst = &self.axes[axis];
        if axis == last {
            let data = values
                .as_slice_mut()
                .expect("fields are kept in standard layout");
            dst.transform_rows(data, scale);
        } else {
            // Gather the strided pencils into contiguous rows, transform,
            // scatter back.
            let mut view = values.view_mut();
            view.swap_axes(axis, last);
            let mut rows: Vec<f64> = view.iter().copied().collect();
            dst.transform_rows(&mut rows, scale);
            for (v, r) in view.iter_mut().zip(rows) {
                *v = r;
            }
        }
    }
}

/// `D_d(R)`: forward DST-I along every axis.
pub fn dst_nd(r: &TensorField, plan: &DstPlan) -> Result<TensorField> {
    plan.forward(r)
}

/// `D_d^{-1}(R)`.
pub fn idst_nd(r: &TensorField, plan: &DstPlan) -> Result<TensorField> {
    plan.inverse(r)
}
