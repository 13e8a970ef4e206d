//! Fast L1 discretization of the Caputo derivative.
//!
//! The L1 operator is split into a local part and a history part. The history
//! kernel `t^{-1-alpha} / Gamma(-alpha)` is replaced by a sum of `Q` decaying
//! exponentials, so the history is carried by `Q` auxiliary fields `Y_j`
//! updated by an exact two-term recurrence instead of a full convolution.
//!
//! Multiplying the fast L1 operator by `tau = dt^alpha Gamma(2 - alpha)` gives
//! `tau D^n = u^n - g^n` with the memory term
//! `g^n = alpha u^{n-1} + (1-alpha) n^{-alpha} u^0 - tau sum_j w_j e^{xi_j dt} Y_j(t_{n-1})`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{ArrayD, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dst::DstPlan;
use crate::error::{Error, Result};
use crate::grid::{Grid, TensorField};
use crate::problems::ProblemSpec;
use crate::spectral::{assemble_rhs, build_h, build_v, RhsMode, SchemeKind};

/// Number of exponentials in the default quadrature.
pub const SOE_NODES: usize = 128;
/// Target precision of the default quadrature.
pub const SOE_EPSILON: f64 = 1e-16;

const PARALLEL_WORK: usize = 1 << 15;

/// Sum-of-exponentials approximation `sum_j w_j e^{xi_j t}` of the kernel
/// `t^{-1-alpha} / Gamma(-alpha)` on `[dt, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoeQuadrature {
    pub alpha: f64,
    pub dt: f64,
    pub t_final: f64,
    pub epsilon: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SoeQuadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_j w_j e^{xi_j t}`.
    pub fn kernel(&self, t: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(xi, w)| w * (xi * t).exp())
            .sum()
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Builds the trapezoidal-rule quadrature with `Q = 128`, `epsilon_0 = 1e-16`.
pub fn soe_build(alpha: f64, dt: f64, t_final: f64) -> Result<SoeQuadrature> {
    soe_build_with(alpha, dt, t_final, SOE_NODES, SOE_EPSILON)
}

/// Trapezoidal rule on `y in [y_min, y_max]` for
/// `t^{-1-alpha} / Gamma(-alpha) = -(sin(alpha pi) / pi) int e^{(1+alpha) y - e^y t} dy`.
pub fn soe_build_with(
    alpha: f64,
    dt: f64,
    t_final: f64,
    q: usize,
    eps: f64,
) -> Result<SoeQuadrature> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "SOE quadrature needs 0 < alpha < 1, got {alpha}"
        )));
    }
    if !(dt > 0.0 && dt < t_final && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "SOE quadrature needs 0 < dt < T, got dt = {dt}, T = {t_final}"
        )));
    }
    if q < 2 || !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "SOE quadrature needs Q >= 2 and 0 < eps < 1, got Q = {q}, eps = {eps}"
        )));
    }
    let c = 1.0 + alpha;
    let y_min = eps.ln() / c - t_final.ln();
    let y_max = ((-eps.ln() + c * dt.ln()) / (0.5 * dt)).ln();
    if !(y_max > y_min) {
        return Err(Error::InvalidParameter(format!(
            "degenerate SOE window: y_max = {y_max} <= y_min = {y_min}"
        )));
    }
    let dy = (y_max - y_min) / (q - 1) as f64;
    // sin(alpha pi) through the smaller of alpha, 1 - alpha (the latter is exact).
    let sine = (PI * alpha.min(1.0 - alpha)).sin();
    let scale = -sine / PI * dy;

    let mut nodes = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    for j in 0..q {
        // y_j = y_min + j dy carried as hi + lo so the nodes stay exactly
        // equispaced; rounding y_j alone costs ~1e-15 in the kernel.
        let (p, pe) = two_prod(j as f64, dy);
        let (hi, se) = two_sum(y_min, p);
        let lo = pe + se;
        let ey = hi.exp();
        nodes.push(-(ey + ey * lo));
        let (chi, ce) = two_prod(c, hi);
        let clo = ce + c * lo;
        let e = chi.exp();
        weights.push(scale * (e + e * clo));
    }
    Ok(SoeQuadrature {
        alpha,
        dt,
        t_final,
        epsilon: eps,
        nodes,
        weights,
    })
}

/// `phi_2(z) = (e^z - 1 - z) / z^2` and `psi(z) = (1 + (z - 1) e^z) / z^2`,
/// by power series for `|z| < 1`.
fn phi2_psi(z: f64) -> (f64, f64) {
    if z.abs() < 1.0 {
        // sum z^k / (k+2)!  and  sum (k+1) z^k / (k+2)!
        let mut term = 0.5;
        let mut phi = 0.0;
        let mut psi = 0.0;
        for k in 0..24 {
            phi += term;
            psi += (k + 1) as f64 * term;
            term *= z / (k + 3) as f64;
        }
        (phi, psi)
    } else {
        let ez = z.exp();
        let z2 = z * z;
        ((z.exp_m1() - z) / z2, (1.0 + (z - 1.0) * ez) / z2)
    }
}

/// Coefficients of `Y_j(t_i) = k1 Y_j(t_{i-1}) + k2 u(t_{i-1}) + k3 u(t_i)`
/// for `z = xi dt`.
pub fn kappa_coefficients(xi: f64, dt: f64) -> (f64, f64, f64) {
    let z = xi * dt;
    let (phi, psi) = phi2_psi(z);
    (z.exp(), dt * psi, dt * phi)
}

/// The fast L1 operator for fixed `(alpha, dt)`: quadrature plus precomputed
/// recurrence coefficients. `alpha = 1` degenerates to backward Euler with no
/// history fields.
#[derive(Clone, Debug)]
pub struct FastL1 {
    alpha: f64,
    dt: f64,
    tau: f64,
    quadrature: Option<SoeQuadrature>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    /// `w_j e^{xi_j dt}`.
    memory: Vec<f64>,
}

impl FastL1 {
    pub fn new(alpha: f64, dt: f64, t_final: f64) -> Result<Self> {
        if alpha == 1.0 {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
            }
            return Ok(Self::assemble(alpha, dt, None));
        }
        Ok(Self::from_quadrature(soe_build(alpha, dt, t_final)?))
    }

    pub fn from_quadrature(quadrature: SoeQuadrature) -> Self {
        Self::assemble(quadrature.alpha, quadrature.dt, Some(quadrature))
    }

    fn assemble(alpha: f64, dt: f64, quadrature: Option<SoeQuadrature>) -> Self {
        let (mut k1, mut k2, mut k3, mut memory) = (vec![], vec![], vec![], vec![]);
        if let Some(quad) = &quadrature {
            for (&xi, &w) in quad.nodes.iter().zip(&quad.weights) {
                let (a, b, c) = kappa_coefficients(xi, dt);
                k1.push(a);
                k2.push(b);
                k3.push(c);
                memory.push(w * a);
            }
        }
        FastL1 {
            alpha,
            dt,
            tau: dt.powf(alpha) * gamma(2.0 - alpha),
            quadrature,
            k1,
            k2,
            k3,
            memory,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `dt^alpha Gamma(2 - alpha)`.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn quadrature(&self) -> Option<&SoeQuadrature> {
        self.quadrature.as_ref()
    }

    /// Number of history fields.
    pub fn q(&self) -> usize {
        self.k1.len()
    }

    pub fn kappas(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.k1, &self.k2, &self.k3)
    }

    /// Fresh state at `t_0` with `Y_j = 0`.
    pub fn init_state(&self, u0: TensorField) -> FastL1State {
        FastL1State {
            step: 0,
            u_prev: u0.clone(),
            history: vec![0.0; u0.len() * self.q()],
            sums: vec![0.0; u0.len()],
            u0,
        }
    }

    /// Memory term `g^n` on flat slices. `sums[i]` is the weighted history
    /// `sum_j w_j e^{xi_j dt} Y_j` at node `i`, as kept by [`Self::history_update_slices`].
    pub fn assemble_g_slices(&self, n: usize, u0: &[f64], u_prev: &[f64], sums: &[f64], out: &mut [f64]) {
        assert!(n >= 1, "memory term is defined for n >= 1");
        let a = self.alpha;
        let b = (1.0 - a) * (n as f64).powf(-a);
        if n > 1 && self.q() > 0 {
            let tau = self.tau;
            for (((o, &p), &z), &s) in out.iter_mut().zip(u_prev).zip(u0).zip(sums) {
                *o = a * p + b * z - tau * s;
            }
        } else {
            for ((o, &p), &z) in out.iter_mut().zip(u_prev).zip(u0) {
                *o = a * p + b * z;
            }
        }
    }

    /// Weighted history sums of node-major `history` (`Y[i * Q + j]`) into `sums`.
    pub fn memory_sums(&self, history: &[f64], sums: &mut [f64]) {
        let q = self.q();
        if q == 0 {
            sums.fill(0.0);
            return;
        }
        for (s, ys) in sums.iter_mut().zip(history.chunks(q)) {
            *s = weighted_sum(&self.memory, ys);
        }
    }

    /// `Y_j <- k1 Y_j + k2 u_prev + k3 u_new` on flat slices, refreshing the
    /// per-node weighted sums in the same pass.
    pub fn history_update_slices(&self, history: &mut [f64], sums: &mut [f64], u_prev: &[f64], u_new: &[f64]) {
        let q = self.q();
        if q == 0 {
            return;
        }
        let (k1, k2, k3, memory) = (&self.k1, &self.k2, &self.k3, &self.memory);
        let kernel = |(((ys, s), &p), &u): (((&mut [f64], &mut f64), &f64), &f64)| {
            for j in 0..ys.len() {
                ys[j] = k1[j] * ys[j] + k2[j] * p + k3[j] * u;
            }
            *s = weighted_sum(memory, ys);
        };
        if history.len() >= PARALLEL_WORK {
            history
                .par_chunks_mut(q)
                .zip(sums.par_iter_mut())
                .zip(u_prev.par_iter())
                .zip(u_new.par_iter())
                .for_each(kernel);
        } else {
            history
                .chunks_mut(q)
                .zip(sums.iter_mut())
                .zip(u_prev)
                .zip(u_new)
                .for_each(kernel);
        }
    }

    /// `g^n` for the state at step `n - 1`.
    pub fn assemble_g(&self, state: &FastL1State, n: usize) -> TensorField {
        let mut out = TensorField::zeros(state.u0.grid());
        self.assemble_g_slices(
            n,
            state.u0.as_slice(),
            state.u_prev.as_slice(),
            &state.sums,
            out.as_slice_mut(),
        );
        out
    }

    /// Advances all history fields by one step.
    pub fn history_update(
        &self,
        state: &mut FastL1State,
        u_prev: &TensorField,
        u_new: &TensorField,
    ) -> Result<()> {
        state.u0.check_same_shape(u_prev.shape())?;
        state.u0.check_same_shape(u_new.shape())?;
        self.history_update_slices(&mut state.history, &mut state.sums, u_prev.as_slice(), u_new.as_slice());
        Ok(())
    }

    /// Records `u_new` as the solution of step `state.step + 1`.
    pub fn advance(&self, state: &mut FastL1State, u_new: TensorField) -> Result<()> {
        state.u0.check_same_shape(u_new.shape())?;
        self.history_update_slices(
            &mut state.history,
            &mut state.sums,
            state.u_prev.as_slice(),
            u_new.as_slice(),
        );
        state.u_prev = u_new;
        state.step += 1;
        Ok(())
    }
}

/// State of the fast L1 recurrence after `step` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct FastL1State {
    step: usize,
    u0: TensorField,
    u_prev: TensorField,
    history: Vec<f64>,
    sums: Vec<f64>,
}

impl FastL1State {
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn initial(&self) -> &TensorField {
        &self.u0
    }

    /// The most recent solution `U^{step}`.
    pub fn current(&self) -> &TensorField {
        &self.u_prev
    }

    /// History fields, node-major: `Y_j` at node `i` is `history()[i * Q + j]`.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// `Y_j` as a field.
    pub fn history_field(&self, j: usize) -> TensorField {
        let len = self.u0.len();
        let q = if len == 0 { 0 } else { self.history.len() / len };
        assert!(j < q, "history index {j} out of range (Q = {q})");
        let values = (0..len).map(|i| self.history[i * q + j]).collect();
        TensorField::from_vec(self.u0.grid(), values).expect("shape from state")
    }

    /// Bytes held by the state's buffers.
    pub fn memory_bytes(&self) -> usize {
        8 * (self.u0.len() + self.u_prev.len() + self.history.len() + self.sums.len())
    }
}

/// Everything needed to resume a run bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub alpha: f64,
    pub dt: f64,
    pub q: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub t_final: f64,
    #[serde(default)]
    pub epsilon: f64,
    pub grid: Grid,
    pub u0: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub history: Vec<f64>,
}

impl Checkpoint {
    pub fn capture(fast: &FastL1, state: &FastL1State) -> Self {
        let quad = fast.quadrature();
        Checkpoint {
            step: state.step,
            alpha: fast.alpha,
            dt: fast.dt,
            q: fast.q(),
            nodes: quad.map(|q| q.nodes.clone()).unwrap_or_default(),
            weights: quad.map(|q| q.weights.clone()).unwrap_or_default(),
            t_final: quad.map_or(0.0, |q| q.t_final),
            epsilon: quad.map_or(0.0, |q| q.epsilon),
            grid: state.u0.grid().clone(),
            u0: state.u0.as_slice().to_vec(),
            u_prev: state.u_prev.as_slice().to_vec(),
            history: state.history.clone(),
        }
    }

    /// Rebuilds the operator and state.
    pub fn restore(&self) -> Result<(FastL1, FastL1State)> {
        if self.nodes.len() != self.q || self.weights.len() != self.q {
            return Err(Error::Config(format!(
                "checkpoint declares Q = {} but stores {} nodes and {} weights",
                self.q,
                self.nodes.len(),
                self.weights.len()
            )));
        }
        let fast = if self.q == 0 {
            FastL1::assemble(self.alpha, self.dt, None)
        } else {
            FastL1::from_quadrature(SoeQuadrature {
                alpha: self.alpha,
                dt: self.dt,
                t_final: self.t_final,
                epsilon: self.epsilon,
                nodes: self.nodes.clone(),
                weights: self.weights.clone(),
            })
        };
        let u0 = TensorField::from_vec(&self.grid, self.u0.clone())?;
        let u_prev = TensorField::from_vec(&self.grid, self.u_prev.clone())?;
        if self.history.len() != u0.len() * self.q {
            return Err(Error::Config(format!(
                "checkpoint history has {} entries, expected {}",
                self.history.len(),
                u0.len() * self.q
            )));
        }
        let mut sums = vec![0.0; u0.len()];
        fast.memory_sums(&self.history, &mut sums);
        let state = FastL1State {
            step: self.step,
            u0,
            u_prev,
            history: self.history.clone(),
            sums,
        };
        Ok((fast, state))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Standard L1 approximation of the Caputo derivative at `t_n` from the full
/// scalar history `u^0..u^n`.
pub fn direct_l1_reference(history: &[f64], alpha: f64, dt: f64, n: usize) -> f64 {
    assert!(n >= 1 && n < history.len(), "need u^0..u^n");
    let scale = dt.powf(-alpha) / gamma(2.0 - alpha);
    let e = 1.0 - alpha;
    let sum: f64 = (0..n)
        .map(|k| {
            let b = ((k + 1) as f64).powf(e) - (k as f64).powf(e);
            b * (history[n - k] - history[n - k - 1])
        })
        .sum();
    scale * sum
}

/// Fast L1 approximations `D^1..D^N` of the Caputo derivative of a scalar
/// trajectory `u^0..u^N` on a uniform grid with step `dt` and horizon `T`.
pub fn fast_l1_scalar(values: &[f64], alpha: f64, dt: f64, t_final: f64) -> Result<Vec<f64>> {
    let fast = FastL1::new(alpha, dt, t_final)?;
    let q = fast.q();
    let mut history = vec![0.0; q];
    let mut sums = [0.0];
    let mut out = Vec::with_capacity(values.len().saturating_sub(1));
    for n in 1..values.len() {
        let mut g = [0.0];
        fast.assemble_g_slices(n, &values[..1], &values[n - 1..n], &sums, &mut g);
        out.push((values[n] - g[0]) / fast.tau);
        fast.history_update_slices(&mut history, &mut sums, &values[n - 1..n], &values[n..n + 1]);
    }
    Ok(out)
}

/// `sum_j m_j y_j` with four partial sums.
fn weighted_sum(m: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (mc, yc) = (m.chunks_exact(4), y.chunks_exact(4));
    let (mr, yr) = (mc.remainder(), yc.remainder());
    for (a, b) in mc.zip(yc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    let tail: f64 = mr.iter().zip(yr).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Parameters of `D_t^alpha u + kappa (-Delta + gamma)^s u = f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub kind: SchemeKind,
    pub s: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub dt: f64,
    pub t_final: f64,
    pub rhs_mode: RhsMode,
}

/// Aggregated wall-clock statistics of the time steps taken so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub steps: usize,
    pub total_secs: f64,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl StepTiming {
    pub(crate) fn record(&mut self, d: Duration) {
        let s = d.as_secs_f64();
        if self.steps == 0 {
            self.min_secs = s;
            self.max_secs = s;
        } else {
            self.min_secs = self.min_secs.min(s);
            self.max_secs = self.max_secs.max(s);
        }
        self.steps += 1;
        self.total_secs += s;
    }

    pub fn mean_secs(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_secs / self.steps as f64
        }
    }
}

/// Fully discrete time stepper
/// `U^n = D(L ⊙ (D^{-1}(G^n) + tau V ⊙ D^{-1}(F^n)))`, `L = 1 / (1 + tau kappa H)`.
#[derive(Clone, Debug)]
pub struct EvolutionSolver {
    params: EvolutionParams,
    plan: DstPlan,
    fast: FastL1,
    h: ArrayD<f64>,
    v: ArrayD<f64>,
    l: ArrayD<f64>,
    v_is_identity: bool,
    state: FastL1State,
    timing: StepTiming,
}

impl EvolutionSolver {
    pub fn new(grid: &Grid, params: EvolutionParams, u0: TensorField) -> Result<Self> {
        let fast = FastL1::new(params.alpha, params.dt, params.t_final)?;
        let state = fast.init_state(u0);
        Self::with_state(grid, params, fast, state)
    }

    /// Resumes from a checkpoint taken with the same parameters.
    pub fn resume(params: EvolutionParams, checkpoint: &Checkpoint) -> Result<Self> {
        if checkpoint.alpha != params.alpha || checkpoint.dt != params.dt {
            return Err(Error::Config(format!(
                "checkpoint was taken with alpha = {}, dt = {}; run uses alpha = {}, dt = {}",
                checkpoint.alpha, checkpoint.dt, params.alpha, params.dt
            )));
        }
        let (fast, state) = checkpoint.restore()?;
        Self::with_state(&checkpoint.grid, params, fast, state)
    }

    fn with_state(
        grid: &Grid,
        params: EvolutionParams,
        fast: FastL1,
        state: FastL1State,
    ) -> Result<Self> {
        if !(params.alpha > 0.0 && params.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                params.alpha
            )));
        }
        if !(params.kappa > 0.0 && params.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive, got {}",
                params.kappa
            )));
        }
        state.u0.check_same_shape(&grid.interior_shape())?;
        let h = build_h(grid, params.kind, params.s, params.gamma)?.values;
        let v = build_v(grid, params.kind, params.rhs_mode)?;
        let v_is_identity = v.is_all_ones();
        let tk = fast.tau * params.kappa;
        let l = h.mapv(|x| 1.0 / (1.0 + tk * x));
        Ok(EvolutionSolver {
            params,
            plan: DstPlan::for_grid(grid)?,
            fast,
            h,
            v: v.values,
            l,
            v_is_identity,
            state,
            timing: StepTiming::default(),
        })
    }

    pub fn params(&self) -> &EvolutionParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        self.state.u0.grid()
    }

    pub fn fast(&self) -> &FastL1 {
        &self.fast
    }

    pub fn state(&self) -> &FastL1State {
        &self.state
    }

    pub fn plan(&self) -> &DstPlan {
        &self.plan
    }

    pub fn step_index(&self) -> usize {
        self.state.step
    }

    pub fn time(&self) -> f64 {
        self.state.step as f64 * self.params.dt
    }

    pub fn current(&self) -> &TensorField {
        &self.state.u_prev
    }

    pub fn timing(&self) -> StepTiming {
        self.timing
    }

    /// `G^{n}` for the upcoming step.
    pub fn memory_term(&self) -> TensorField {
        self.fast.assemble_g(&self.state, self.state.step + 1)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.fast, &self.state)
    }

    /// Advances one step given the right-hand side array `F^n` (already in
    /// the layout selected by `rhs_mode`).
    pub fn step(&mut self, rhs: &TensorField) -> Result<&TensorField> {
        let start = Instant::now();
        self.state.u0.check_same_shape(rhs.shape())?;
        let n = self.state.step + 1;
        let mut g = self.fast.assemble_g(&self.state, n);
        let tau = self.fast.tau;
        let mut hat = if self.v_is_identity {
            // D^{-1} is linear, so G + tau F shares one transform.
            Zip::from(g.values_mut())
                .and(rhs.values())
                .for_each(|a, &b| *a += tau * b);
            self.plan.inverse_in_place(g.values_mut());
            g
        } else {
            self.plan.inverse_in_place(g.values_mut());
            let mut f_hat = rhs.clone();
            self.plan.inverse_in_place(f_hat.values_mut());
            Zip::from(g.values_mut())
                .and(f_hat.values())
                .and(&self.v)
                .for_each(|a, &b, &v| *a += tau * v * b);
            g
        };
        Zip::from(hat.values_mut())
            .and(&self.l)
            .for_each(|a, &l| *a *= l);
        self.plan.forward_in_place(hat.values_mut());
        if !hat.is_finite() {
            return Err(Error::NonFinite("time step"));
        }
        self.fast.advance(&mut self.state, hat)?;
        self.timing.record(start.elapsed());
        Ok(&self.state.u_prev)
    }

    /// Samples `f(., t_n)` and advances one step.
    pub fn step_fn<F>(&mut self, f: F) -> Result<&TensorField>
    where
        F: Fn(&[f64], f64) -> f64,
    {
        let t = (self.state.step + 1) as f64 * self.params.dt;
        let rhs = assemble_rhs(self.grid(), self.params.rhs_mode, |x| f(x, t));
        self.step(&rhs)
    }

    /// Residual of the fully discrete equation
    /// `D((1 + tau kappa H) ⊙ D^{-1} U) - G - tau D(V ⊙ D^{-1} F)`.
    pub fn residual(&self, u: &TensorField, g: &TensorField, rhs: &TensorField) -> Result<TensorField> {
        let tk = self.fast.tau * self.params.kappa;
        let mut lhs = self.plan.inverse(u)?;
        Zip::from(lhs.values_mut())
            .and(&self.h)
            .for_each(|a, &h| *a *= 1.0 + tk * h);
        self.plan.forward_in_place(lhs.values_mut());
        let mut src = self.plan.inverse(rhs)?;
        Zip::from(src.values_mut())
            .and(&self.v)
            .for_each(|a, &v| *a *= self.fast.tau * v);
        self.plan.forward_in_place(src.values_mut());
        lhs.axpy(-1.0, g)?.axpy(-1.0, &src)
    }
}

/// A field captured during a run.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub requested_time: f64,
    pub step: usize,
    pub time: f64,
    pub field: TensorField,
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub final_field: TensorField,
    pub final_time: f64,
    pub steps: usize,
    pub snapshots: Vec<Snapshot>,
    pub timing: StepTiming,
}

/// Step index nearest to `t` on the grid `k dt`, clamped to `0..=n_steps`.
pub fn nearest_step(t: f64, dt: f64, n_steps: usize) -> usize {
    let k = (t / dt).round();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n_steps)
    }
}

/// Integrates `problem` on `grid` up to its final time with `n_steps` uniform
/// steps, capturing the steps nearest to each of `snapshot_times`.
pub fn run(
    problem: &ProblemSpec,
    grid: &Grid,
    n_steps: usize,
    snapshot_times: &[f64],
) -> Result<RunOutput> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter("need at least one time step".into()));
    }
    let dt = problem.t_final / n_steps as f64;
    let params = problem.evolution_params(dt);
    let u0 = TensorField::from_fn(grid, |x| (problem.initial)(x));
    let mut solver = EvolutionSolver::new(grid, params, u0)?;

    let wanted: Vec<(f64, usize)> = snapshot_times
        .iter()
        .map(|&t| (t, nearest_step(t, dt, n_steps)))
        .collect();
    let mut snapshots = Vec::with_capacity(wanted.len());
    let take = |step: usize, field: &TensorField, out: &mut Vec<Snapshot>| {
        for &(t, k) in &wanted {
            if k == step {
                out.push(Snapshot {
                    requested_time: t,
                    step,
                    time: step as f64 * dt,
                    field: field.clone(),
                });
            }
        }
    };
    take(0, solver.current(), &mut snapshots);
    let source = problem.source.clone();
    for n in 1..=n_steps {
        let u = solver.step_fn(|x, t| source(x, t))?;
        take(n, u, &mut snapshots);
    }
    Ok(RunOutput {
        final_time: n_steps as f64 * dt,
        steps: n_steps,
        timing: solver.timing(),
        snapshots,
        final_field: solver.state.u_prev,
    })
}
