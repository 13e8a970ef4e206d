use std::time::Instant;

use ndarray::{ArrayD, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dst::DstPlan;
use crate::error::{Error, Result};
use crate::fast_l1::{nearest_step, FastL1, FastL1State, Snapshot, StepTiming};
use crate::grid::{Grid, TensorField};
use crate::spectral::{mode_eigenvalues, mode_sum, SchemeKind};

/// Abort threshold on `max |u|`.
const BLOW_UP_NORM: f64 = 10.0;

/// Nonlinear part `F(u)` of the chemical potential.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `F(u) = u^3 - u`.
    #[default]
    DoubleWell,
    /// `F = 0`; the equation is linear.
    None,
}

impl Nonlinearity {
    fn eval(self, u: f64) -> f64 {
        match self {
            Nonlinearity::DoubleWell => u * u * u - u,
            Nonlinearity::None => 0.0,
        }
    }
}

/// `D_t^alpha u = -(-Delta)^beta (eps^{2s} (-Delta)^s u + F(u))` on a box with
/// homogeneous Dirichlet data and a seeded random initial field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CahnHilliardSpec {
    pub epsilon: f64,
    pub s: f64,
    pub beta: f64,
    pub alpha: f64,
    pub dt: f64,
    pub t_final: f64,
    pub grid: Grid,
    pub kind: SchemeKind,
    pub seed: u64,
    pub snapshot_times: Vec<f64>,
    /// Linear stabilization constant `S`: `S u` is added to the implicit side
    /// and subtracted from the explicit nonlinearity.
    pub stabilization: f64,
    pub nonlinearity: Nonlinearity,
    /// Initial values are drawn uniformly from `[-amplitude, amplitude]`.
    pub amplitude: f64,
}

impl Default for CahnHilliardSpec {
    fn default() -> Self {
        CahnHilliardSpec {
            epsilon: 0.02,
            s: 0.8,
            beta: 1.0,
            alpha: 0.8,
            dt: 0.001,
            t_final: 0.5,
            grid: Grid::unit(2, 128).expect("valid grid"),
            kind: SchemeKind::Fd2,
            seed: 2024,
            snapshot_times: vec![0.026, 0.06, 0.16, 0.5],
            stabilization: 2.0,
            nonlinearity: Nonlinearity::DoubleWell,
            amplitude: 0.05,
        }
    }
}

impl CahnHilliardSpec {
    /// Coarsening configuration with linear FEM on `(0, 1)^2`, `h = 1 / n`.
    pub fn coarsening(s: f64, alpha: f64, n: usize) -> Result<Self> {
        Ok(CahnHilliardSpec {
            s,
            alpha,
            grid: Grid::unit(2, n)?,
            kind: SchemeKind::Fem,
            ..Default::default()
        })
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.s > 0.0 && self.s <= 1.0) || !(self.beta >= 0.0 && self.beta <= 1.0) {
            return bad(format!(
                "need s in (0, 1] and beta in [0, 1], got s = {}, beta = {}",
                self.s, self.beta
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.dt > 0.0 && self.t_final > self.dt) {
            return bad(format!(
                "need 0 < dt < T, got dt = {}, T = {}",
                self.dt, self.t_final
            ));
        }
        if !(self.stabilization >= 0.0) || !(self.amplitude >= 0.0) {
            return bad("stabilization and amplitude must be non-negative".into());
        }
        Ok(())
    }
}

/// Uniform values in `[-amplitude, amplitude]`, one ChaCha8 draw per node in
/// row-major order, so the field depends only on `(seed, node index)`.
pub fn initial_field(grid: &Grid, seed: u64, amplitude: f64) -> TensorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.len())
        .map(|_| {
            if amplitude > 0.0 {
                rng.random_range(-amplitude..=amplitude)
            } else {
                0.0
            }
        })
        .collect();
    TensorField::from_vec(grid, values).expect("length from grid")
}

/// Semi-implicit fast-L1 stepper:
/// `u_hat = (g_hat - tau L^beta (F(u) - S u)_hat) / (1 + tau eps^{2s} L^{beta+s} + tau S L^beta)`.
#[derive(Clone, Debug)]
pub struct CahnHilliardSolver {
    spec: CahnHilliardSpec,
    plan: DstPlan,
    fast: FastL1,
    state: FastL1State,
    /// `tau L^beta`.
    explicit: ArrayD<f64>,
    /// Reciprocal of the implicit denominator.
    implicit: ArrayD<f64>,
    peak: f64,
    timing: StepTiming,
}

impl CahnHilliardSolver {
    pub fn new(spec: &CahnHilliardSpec) -> Result<Self> {
        let u0 = initial_field(&spec.grid, spec.seed, spec.amplitude);
        Self::with_initial(spec, u0)
    }

    pub fn with_initial(spec: &CahnHilliardSpec, u0: TensorField) -> Result<Self> {
        spec.validate()?;
        u0.check_same_shape(&spec.grid.interior_shape())?;
        let fast = FastL1::new(spec.alpha, spec.dt, spec.t_final)?;
        let tau = fast.tau();
        let lam = mode_sum(&mode_eigenvalues(spec.kind, &spec.grid, 0.0));
        let e2s = spec.epsilon.powf(2.0 * spec.s);
        let explicit = lam.mapv(|l| tau * l.powf(spec.beta));
        let implicit = Zip::from(&lam).and(&explicit).map_collect(|&l, &e| {
            1.0 / (1.0 + tau * e2s * l.powf(spec.beta + spec.s) + spec.stabilization * e)
        });
        let peak = u0.max_norm();
        Ok(CahnHilliardSolver {
            spec: spec.clone(),
            plan: DstPlan::for_grid(&spec.grid)?,
            state: fast.init_state(u0),
            fast,
            explicit,
            implicit,
            peak,
            timing: StepTiming::default(),
        })
    }

    pub fn spec(&self) -> &CahnHilliardSpec {
        &self.spec
    }

    pub fn current(&self) -> &TensorField {
        self.state.current()
    }

    pub fn step_index(&self) -> usize {
        self.state.step()
    }

    pub fn time(&self) -> f64 {
        self.state.step() as f64 * self.spec.dt
    }

    /// Largest `max |u|` seen so far, including the initial field.
    pub fn peak_max_norm(&self) -> f64 {
        self.peak
    }

    pub fn timing(&self) -> StepTiming {
        self.timing
    }

    pub fn step(&mut self) -> Result<&TensorField> {
        let start = Instant::now();
        let n = self.state.step() + 1;
        let mut g = self.fast.assemble_g(&self.state, n);
        let u = self.state.current();
        let (stab, nl) = (self.spec.stabilization, self.spec.nonlinearity);
        let mut w = u.map(|v| nl.eval(v) - stab * v);
        self.plan.inverse_in_place(g.values_mut());
        self.plan.inverse_in_place(w.values_mut());
        Zip::from(g.values_mut())
            .and(w.values())
            .and(&self.explicit)
            .and(&self.implicit)
            .for_each(|gh, &wh, &e, &d| *gh = (*gh - e * wh) * d);
        self.plan.forward_in_place(g.values_mut());
        let norm = g.max_norm();
        if !norm.is_finite() || norm > BLOW_UP_NORM {
            return Err(Error::BlowUp { step: n, norm });
        }
        self.peak = self.peak.max(norm);
        self.fast.advance(&mut self.state, g)?;
        self.timing.record(start.elapsed());
        Ok(self.state.current())
    }
}

/// Result of [`run_cahn_hilliard`].
#[derive(Clone, Debug)]
pub struct CahnHilliardOutput {
    pub initial: TensorField,
    pub final_field: TensorField,
    pub steps: usize,
    pub snapshots: Vec<Snapshot>,
    pub peak_max_norm: f64,
    pub timing: StepTiming,
}

pub fn run_cahn_hilliard(spec: &CahnHilliardSpec) -> Result<CahnHilliardOutput> {
    let mut solver = CahnHilliardSolver::new(spec)?;
    let n_steps = spec.n_steps();
    let wanted: Vec<(f64, usize)> = spec
        .snapshot_times
        .iter()
        .map(|&t| (t, nearest_step(t, spec.dt, n_steps)))
        .collect();
    let mut snapshots = Vec::new();
    let mut take = |step: usize, field: &TensorField| {
        for &(t, k) in &wanted {
            if k == step {
                snapshots.push(Snapshot {
                    requested_time: t,
                    step,
                    time: step as f64 * spec.dt,
                    field: field.clone(),
                });
            }
        }
    };
    let initial = solver.current().clone();
    take(0, &initial);
    for n in 1..=n_steps {
        let u = solver.step()?;
        take(n, u);
    }
    Ok(CahnHilliardOutput {
        initial,
        final_field: solver.current().clone(),
        steps: n_steps,
        snapshots,
        peak_max_norm: solver.peak_max_norm(),
        timing: solver.timing(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small_spec() -> CahnHilliardSpec {
        CahnHilliardSpec {
            grid: Grid::unit(2, 32).unwrap(),
            t_final: 0.02,
            ..Default::default()
        }
    }

    #[test]
    fn initial_field_is_bounded_and_seeded() {
        let grid = Grid::unit(2, 64).unwrap();
        let a = initial_field(&grid, 7, 0.05);
        let b = initial_field(&grid, 7, 0.05);
        let c = initial_field(&grid, 8, 0.05);
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a.as_slice(), c.as_slice());
        assert!(a.as_slice().iter().all(|v| v.abs() <= 0.05));
        assert!(a.max_norm() > 0.04);
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let spec = small_spec();
        let mut solver =
            CahnHilliardSolver::with_initial(&spec, TensorField::zeros(&spec.grid)).unwrap();
        for _ in 0..10 {
            assert_eq!(solver.step().unwrap().max_norm(), 0.0);
        }
    }

    #[test]
    fn linear_single_mode_matches_scalar_recurrence() {
        let spec = CahnHilliardSpec {
            nonlinearity: Nonlinearity::None,
            stabilization: 0.0,
            kind: SchemeKind::Fem,
            alpha: 0.6,
            ..small_spec()
        };
        let grid = &spec.grid;
        let phi = TensorField::from_fn(grid, |x| (PI * x[0]).sin() * (3.0 * PI * x[1]).sin());
        let lam = mode_eigenvalues(spec.kind, grid, 0.0);
        let l = lam[0][0] + lam[1][2];
        let mut solver = CahnHilliardSolver::with_initial(&spec, phi.clone()).unwrap();
        let fast = FastL1::new(spec.alpha, spec.dt, spec.t_final).unwrap();
        let one = Grid::unit(1, 2).unwrap();
        let mut scalar = fast.init_state(TensorField::constant(&one, 1.0));
        let damp = 1.0 + fast.tau() * spec.epsilon.powf(2.0 * spec.s) * l.powf(spec.beta + spec.s);
        for n in 1..=15 {
            solver.step().unwrap();
            let g = fast.assemble_g(&scalar, n).as_slice()[0];
            fast.advance(&mut scalar, TensorField::constant(&one, g / damp)).unwrap();
            let expected = phi.scaled(scalar.current().as_slice()[0]);
            let err = solver.current().axpy(-1.0, &expected).unwrap().max_norm();
            assert!(err < 1e-13, "step {n}: {err}");
        }
    }

    #[test]
    fn stabilization_does_not_move_linear_fixed_points() {
        // With F = 0 and S > 0 the explicit and implicit S-terms cancel at
        // steady state; zero stays zero and a decaying mode stays bounded.
        let spec = CahnHilliardSpec {
            nonlinearity: Nonlinearity::None,
            ..small_spec()
        };
        let u0 = initial_field(&spec.grid, 3, 0.05);
        let mut solver = CahnHilliardSolver::with_initial(&spec, u0).unwrap();
        for _ in 0..20 {
            solver.step().unwrap();
        }
        assert!(solver.current().max_norm() <= 0.05);
    }

    #[test]
    fn short_run_is_deterministic() {
        let spec = small_spec();
        let a = run_cahn_hilliard(&spec).unwrap();
        let b = run_cahn_hilliard(&spec).unwrap();
        assert_eq!(a.final_field.as_slice(), b.final_field.as_slice());
        assert_eq!(a.steps, 20);
        assert!(a.peak_max_norm < 1.5);
    }

    #[test]
    fn blow_up_is_reported() {
        // Explicit treatment of a huge cubic term without stabilization.
        let spec = CahnHilliardSpec {
            stabilization: 0.0,
            amplitude: 5.0,
            ..small_spec()
        };
        let mut solver = CahnHilliardSolver::new(&spec).unwrap();
        let mut failed = false;
        for _ in 0..20 {
            if let Err(Error::BlowUp { .. }) = solver.step() {
                failed = true;
                break;
            }
        }
        assert!(failed);
    }

    #[test]
    fn snapshot_steps_are_nearest() {
        let spec = CahnHilliardSpec {
            snapshot_times: vec![0.0, 0.0104, 0.02],
            ..small_spec()
        };
        let out = run_cahn_hilliard(&spec).unwrap();
        let steps: Vec<usize> = out.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 10, 20]);
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = CahnHilliardSpec {
            epsilon: 0.0,
            ..small_spec()
        };
        assert!(CahnHilliardSolver::new(&spec).is_err());
    }
}
