//! Problem definitions: manufactured solutions with known exact answers, the
//! singular and stripe-domain steady problems, and the fractional
//! Cahn-Hilliard driver.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast_l1::EvolutionParams;
use crate::grid::Grid;
use crate::spectral::{RhsMode, SchemeKind, SteadyParams};

mod cahn_hilliard;

pub use cahn_hilliard::{
    initial_field, run_cahn_hilliard, CahnHilliardOutput, CahnHilliardSolver, CahnHilliardSpec,
    Nonlinearity,
};

pub type SpatialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A fractional diffusion problem `D_t^alpha u + kappa (-Delta + gamma)^s u = f`
/// (or its steady counterpart) on a box with homogeneous Dirichlet data.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    /// Per-axis `(a_k, b_k)`.
    pub domain: Vec<(f64, f64)>,
    pub kind: SchemeKind,
    /// Caputo order in `(0, 1]`; ignored by steady problems.
    pub alpha: f64,
    pub s: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub t_final: f64,
    pub rhs_mode: RhsMode,
    pub steady: bool,
    pub initial: SpatialFn,
    pub source: SpaceTimeFn,
    pub exact: Option<SpaceTimeFn>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("kind", &self.kind)
            .field("alpha", &self.alpha)
            .field("s", &self.s)
            .field("gamma", &self.gamma)
            .field("kappa", &self.kappa)
            .field("t_final", &self.t_final)
            .field("rhs_mode", &self.rhs_mode)
            .field("steady", &self.steady)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    /// Grid with `n` intervals along every axis.
    pub fn grid(&self, n: usize) -> Result<Grid> {
        Grid::new(&self.domain, &vec![n; self.dim()])
    }

    pub fn grid_with_counts(&self, counts: &[usize]) -> Result<Grid> {
        Grid::new(&self.domain, counts)
    }

    pub fn steady_params(&self) -> SteadyParams {
        SteadyParams {
            kind: self.kind,
            s: self.s,
            gamma: self.gamma,
            kappa: self.kappa,
            rhs_mode: self.rhs_mode,
        }
    }

    pub fn evolution_params(&self, dt: f64) -> EvolutionParams {
        EvolutionParams {
            kind: self.kind,
            s: self.s,
            gamma: self.gamma,
            kappa: self.kappa,
            alpha: self.alpha,
            dt,
            t_final: self.t_final,
            rhs_mode: self.rhs_mode,
        }
    }

    pub fn with_kind(mut self, kind: SchemeKind) -> Self {
        self.kind = kind;
        self.rhs_mode = RhsMode::reference_default(kind);
        self
    }

    pub fn with_rhs_mode(mut self, mode: RhsMode) -> Self {
        self.rhs_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.is_empty() || self.domain.len() > 3 {
            return Err(Error::InvalidParameter(format!(
                "dimension must be 1, 2 or 3, got {}",
                self.domain.len()
            )));
        }
        if !(self.s > 0.0) || !(self.gamma >= 0.0) || !(self.kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need s > 0, gamma >= 0, kappa > 0; got s = {}, gamma = {}, kappa = {}",
                self.s, self.gamma, self.kappa
            )));
        }
        if !self.steady && !(self.alpha > 0.0 && self.alpha <= 1.0 && self.t_final > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < alpha <= 1 and T > 0; got alpha = {}, T = {}",
                self.alpha, self.t_final
            )));
        }
        Ok(())
    }
}

/// Caputo derivative of `t^mu`: `Gamma(mu + 1) / Gamma(mu + 1 - alpha) t^{mu - alpha}`.
pub fn caputo_power(mu: f64, alpha: f64, t: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Caputo derivative of t^mu needs mu > 0, got {mu}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) || t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < alpha <= 1 and t >= 0, got alpha = {alpha}, t = {t}"
        )));
    }
    if t == 0.0 {
        return Ok(if mu > alpha {
            0.0
        } else if mu == alpha {
            libm::tgamma(mu + 1.0)
        } else {
            f64::INFINITY
        });
    }
    if mu == 1.0 {
        return Ok(t.powf(1.0 - alpha) / libm::tgamma(2.0 - alpha));
    }
    Ok(libm::tgamma(mu + 1.0) / libm::tgamma(mu + 1.0 - alpha) * t.powf(mu - alpha))
}

fn sine_product(n: usize) -> impl Fn(&[f64]) -> f64 + Send + Sync + Clone {
    let k = n as f64 * PI;
    move |x: &[f64]| x.iter().map(|&xi| (k * xi).sin()).product()
}

/// Steady problem with `f = prod_k sin(n pi x_k)` on `(0, 1)^d` and exact
/// solution `u = f / (d n^2 pi^2 + gamma)^s`.
pub fn example_4_1(d: usize, n: usize, s: f64, gamma: f64, kind: SchemeKind) -> ProblemSpec {
    let lambda = d as f64 * (n * n) as f64 * PI * PI + gamma;
    let scale = lambda.powf(-s);
    let phi = sine_product(n);
    let phi_exact = phi.clone();
    ProblemSpec {
        name: "smooth".into(),
        domain: vec![(0.0, 1.0); d],
        kind,
        alpha: 1.0,
        s,
        gamma,
        kappa: 1.0,
        t_final: 1.0,
        rhs_mode: RhsMode::reference_default(kind),
        steady: true,
        initial: Arc::new(|_| 0.0),
        source: Arc::new(move |x, _| phi(x)),
        exact: Some(Arc::new(move |x, _| scale * phi_exact(x))),
    }
}

/// Steady problem with `f = 1`, `gamma = 1` on `(0, 1)^2`; the solution has
/// boundary layers and no closed form.
pub fn example_4_2(s: f64, kind: SchemeKind) -> ProblemSpec {
    ProblemSpec {
        name: "singular".into(),
        domain: vec![(0.0, 1.0); 2],
        kind,
        alpha: 1.0,
        s,
        gamma: 1.0,
        kappa: 1.0,
        t_final: 1.0,
        rhs_mode: RhsMode::reference_default(kind),
        steady: true,
        initial: Arc::new(|_| 0.0),
        source: Arc::new(|_, _| 1.0),
        exact: None,
    }
}

/// `sign(v) |v|^p`.
fn signed_pow(v: f64, p: f64) -> f64 {
    v.signum() * v.abs().powf(p)
}

/// Source of the stripe-domain problem.
pub fn stripe_source(s: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync + Clone {
    let a = [-PI / 3.0, PI / 5.0];
    let b = [PI / 5.0, -PI / 3.0];
    let amp = 2f64.powf(2.0 * s) * libm::tgamma(1.0 + s);
    let p = 2.0 * s / 5.0;
    move |x: &[f64]| {
        let ax = a[0] * x[0] + a[1] * x[1];
        let bx = b[0] * x[0] + b[1] * x[1];
        let r2 = x[0] * x[0] + x[1] * x[1];
        let lead = if ax.cos() == 0.0 { 0.0 } else { signed_pow(ax.cos(), p) }
            + if bx.sin() == 0.0 { 0.0 } else { signed_pow(bx.sin(), p) };
        amp * lead * ((-r2).cos() + 1.2 * (-r2).sin())
    }
}

/// Steady CDM4 problem on the stripe `(-5, 5) x (-0.5, 0.5)`.
pub fn example_4_3(s: f64) -> ProblemSpec {
    let f = stripe_source(s);
    ProblemSpec {
        name: "stripe".into(),
        domain: vec![(-5.0, 5.0), (-0.5, 0.5)],
        kind: SchemeKind::Cdm4,
        alpha: 1.0,
        s,
        gamma: 0.0,
        kappa: 1.0,
        t_final: 1.0,
        rhs_mode: RhsMode::Nodal,
        steady: true,
        initial: Arc::new(|_| 0.0),
        source: Arc::new(move |x, _| f(x)),
        exact: None,
    }
}

/// Time profile of the manufactured evolution problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeProfile {
    /// `g(t) = t`.
    Linear,
    /// `g(t) = t^{1.5}`.
    Power15,
}

impl TimeProfile {
    pub fn exponent(self) -> f64 {
        match self {
            TimeProfile::Linear => 1.0,
            TimeProfile::Power15 => 1.5,
        }
    }

    pub fn value(self, t: f64) -> f64 {
        match self {
            TimeProfile::Linear => t,
            TimeProfile::Power15 => t * t.sqrt(),
        }
    }
}

impl std::str::FromStr for TimeProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t" | "linear" => Ok(TimeProfile::Linear),
            "t^1.5" | "t1.5" | "power15" | "power_1_5" => Ok(TimeProfile::Power15),
            other => Err(Error::InvalidParameter(format!(
                "unknown time profile `{other}` (expected linear or power15)"
            ))),
        }
    }
}

/// Evolution problem on `(0, 1)^2` with `d = 2`, `gamma = 1`, `n = 1`,
/// `kappa = 0.1`, `T = 1` and exact solution
/// `u = g(t) prod_k sin(pi x_k) / (2 pi^2 + 1)^s`.
pub fn example_4_4(g: TimeProfile, s: f64, alpha: f64) -> ProblemSpec {
    let (d, n, gamma, kappa) = (2usize, 1usize, 1.0, 0.1);
    let lambda_s = (d as f64 * (n * n) as f64 * PI * PI + gamma).powf(s);
    let mu = g.exponent();
    let dg_scale = if mu == 1.0 {
        1.0 / libm::tgamma(2.0 - alpha)
    } else {
        libm::tgamma(mu + 1.0) / libm::tgamma(mu + 1.0 - alpha)
    };
    let phi = sine_product(n);
    let phi_exact = phi.clone();
    ProblemSpec {
        name: "manufactured".into(),
        domain: vec![(0.0, 1.0); d],
        kind: SchemeKind::Cdm4,
        alpha,
        s,
        gamma,
        kappa,
        t_final: 1.0,
        rhs_mode: RhsMode::Nodal,
        steady: false,
        initial: Arc::new(move |x| g.value(0.0) * phi_exact(x) / lambda_s),
        source: Arc::new(move |x, t| {
            let dg = if t > 0.0 { dg_scale * t.powf(mu - alpha) } else { 0.0 };
            (dg / lambda_s + kappa * g.value(t)) * phi(x)
        }),
        exact: Some(Arc::new(move |x, t| {
            g.value(t) * sine_product(n)(x) / lambda_s
        })),
    }
}
