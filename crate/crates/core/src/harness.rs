//! Convergence studies, error/rate tables, report and snapshot emission, and
//! scaling benchmarks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Dimension;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast_l1::{run, EvolutionParams, EvolutionSolver};
use crate::grid::{discrete_l2_norm, discrete_max_norm, Grid, TensorField};
use crate::problems::{
    example_4_1, example_4_2, example_4_3, example_4_4, CahnHilliardSpec, ProblemSpec, TimeProfile,
};
use crate::spectral::{RhsMode, SchemeKind, SteadySolver};

/// `r_i = log2(e_i / e_{i+1})` between adjacent entries.
pub fn compute_rates(errors: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = errors.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "rates need positive finite errors, got {bad}"
        )));
    }
    Ok(errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect())
}

/// C-style `%.{prec}e`: mantissa with `prec` decimals and a signed exponent of
/// at least two digits (`2.525000e-06`).
pub fn format_sci(v: f64, prec: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.prec$e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let (sign, digits) = match exp.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', exp),
    };
    format!("{mantissa}e{sign}{digits:0>2}")
}

fn fmt_table_float(v: f64) -> String {
    format_sci(v, 6)
}

/// Which norm a study reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Max,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::L2 => "l2",
            Norm::Max => "max",
        }
    }

    pub fn eval(self, e: &TensorField) -> f64 {
        match self {
            Norm::L2 => discrete_l2_norm(e),
            Norm::Max => discrete_max_norm(e),
        }
    }
}

/// One sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    /// Parameter pair label, e.g. `(0.3,0)`.
    pub label: String,
    pub s: f64,
    /// `gamma` for steady studies, `alpha` for evolution studies.
    pub param: f64,
    /// Spatial intervals per axis or number of time steps.
    pub size: usize,
    pub error: Option<f64>,
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub problem: String,
    pub discretization: String,
    pub norm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub git_revision: Option<String>,
}

impl Metadata {
    /// Timestamp from `SOURCE_DATE_EPOCH` when set, so repeated runs stay
    /// byte-identical by default.
    pub fn timestamp_from_env() -> Option<String> {
        let secs: i64 = std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()?;
        Some(format_utc(secs))
    }
}

/// `YYYY-MM-DDTHH:MM:SSZ` for Unix seconds.
pub fn format_utc(secs: i64) -> String {
    let days = secs.div_euclid(86_400);
    let rem = secs.rem_euclid(86_400);
    // Civil-from-days (proleptic Gregorian).
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);
    format!(
        "{y:04}-{m:02}-{d:02}T{:02}:{:02}:{:02}Z",
        rem / 3600,
        rem % 3600 / 60,
        rem % 60
    )
}

/// Error/rate table of a convergence study.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub title: String,
    /// Column name of the second parameter (`gamma` or `alpha`).
    pub param_name: String,
    /// Column name of the sweep variable (`N` or `Nt`).
    pub size_name: String,
    pub metadata: Metadata,
    pub rows: Vec<RateRow>,
}

impl RateTable {
    /// Rows grouped by label in first-appearance order.
    pub fn groups(&self) -> Vec<(&str, Vec<&RateRow>)> {
        let mut out: Vec<(&str, Vec<&RateRow>)> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|(l, _)| *l == row.label) {
                Some((_, rows)) => rows.push(row),
                None => out.push((&row.label, vec![row])),
            }
        }
        out
    }

    pub fn group(&self, label: &str) -> Vec<&RateRow> {
        self.rows.iter().filter(|r| r.label == label).collect()
    }

    /// Fills `rate` from neighboring errors within each group.
    pub fn fill_rates(&mut self) {
        for i in 0..self.rows.len() {
            let rate = if i > 0 && self.rows[i - 1].label == self.rows[i].label {
                match (self.rows[i - 1].error, self.rows[i].error) {
                    (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
                    _ => None,
                }
            } else {
                None
            };
            self.rows[i].rate = rate;
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &RateRow> {
        self.rows.iter().filter(|r| r.failure.is_some())
    }
}

/// Output format of [`emit_report`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!(
                "unknown report format `{other}` (expected csv, json or markdown)"
            ))),
        }
    }
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

pub fn render_report(table: &RateTable, format: ReportFormat) -> Result<String> {
    let rate = |r: f64| format!("{r:.3}");
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let _ = writeln!(
                out,
                "label,s,{},{},error,rate,status",
                table.param_name, table.size_name
            );
            for row in &table.rows {
                let _ = writeln!(
                    out,
                    "\"{}\",{},{},{},{},{},{}",
                    row.label,
                    row.s,
                    row.param,
                    row.size,
                    opt(row.error, fmt_table_float),
                    opt(row.rate, rate),
                    row.failure
                        .as_deref()
                        .map(|f| format!("\"failed: {}\"", f.replace('"', "'")))
                        .unwrap_or_else(|| "ok".into()),
                );
            }
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(table)?;
            out.push('\n');
        }
        ReportFormat::Markdown => {
            let _ = writeln!(out, "## {}\n", table.title);
            let m = &table.metadata;
            let _ = writeln!(out, "- problem: {}", m.problem);
            let _ = writeln!(out, "- discretization: {}", m.discretization);
            let _ = writeln!(out, "- norm: {}", m.norm);
            if let Some(ts) = &m.timestamp {
                let _ = writeln!(out, "- timestamp: {ts}");
            }
            if let Some(rev) = &m.git_revision {
                let _ = writeln!(out, "- revision: {rev}");
            }
            let _ = writeln!(
                out,
                "\n| (s,{}) | {} | error | rate |\n|---|---:|---:|---:|",
                table.param_name, table.size_name
            );
            for row in &table.rows {
                let err = match (&row.failure, row.error) {
                    (Some(f), _) => format!("failed: {f}"),
                    (None, e) => opt(e, fmt_table_float),
                };
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} |",
                    row.label,
                    row.size,
                    err,
                    opt(row.rate, rate)
                );
            }
        }
    }
    Ok(out)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn emit_report(table: &RateTable, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &render_report(table, format)?)
}

/// Field dump format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    /// One row per interior node: coordinates then value.
    Csv,
    /// Legacy VTK structured points (ASCII).
    Vtk,
}

impl SnapshotFormat {
    pub fn extension(self) -> &'static str {
        match self {
            SnapshotFormat::Csv => "csv",
            SnapshotFormat::Vtk => "vtk",
        }
    }
}

pub fn render_field_snapshot(field: &TensorField, format: SnapshotFormat) -> String {
    let grid = field.grid();
    let d = grid.dim();
    let names = ["x", "y", "z"];
    let mut out = String::new();
    match format {
        SnapshotFormat::Csv => {
            let header: Vec<&str> = names[..d].iter().copied().chain(["u"]).collect();
            let _ = writeln!(out, "{}", header.join(","));
            let mut x = vec![0.0; d];
            for (idx, &v) in field.values().indexed_iter() {
                grid.coordinates_into(idx.slice(), &mut x);
                for xi in &x {
                    let _ = write!(out, "{},", format_sci(*xi, 9));
                }
                let _ = writeln!(out, "{}", format_sci(v, 9));
            }
        }
        SnapshotFormat::Vtk => {
            let shape = field.shape();
            let dim = |k: usize| if k < d { shape[k] } else { 1 };
            let origin = |k: usize| if k < d { grid.axis(k).node(0) } else { 0.0 };
            let spacing = |k: usize| if k < d { grid.axis(k).spacing() } else { 1.0 };
            let _ = writeln!(out, "# vtk DataFile Version 3.0");
            let _ = writeln!(out, "sfl field");
            let _ = writeln!(out, "ASCII");
            let _ = writeln!(out, "DATASET STRUCTURED_POINTS");
            let _ = writeln!(out, "DIMENSIONS {} {} {}", dim(0), dim(1), dim(2));
            let _ = writeln!(
                out,
                "ORIGIN {} {} {}",
                format_sci(origin(0), 9),
                format_sci(origin(1), 9),
                format_sci(origin(2), 9)
            );
            let _ = writeln!(
                out,
                "SPACING {} {} {}",
                format_sci(spacing(0), 9),
                format_sci(spacing(1), 9),
                format_sci(spacing(2), 9)
            );
            let _ = writeln!(out, "POINT_DATA {}", field.len());
            let _ = writeln!(out, "SCALARS u double 1");
            let _ = writeln!(out, "LOOKUP_TABLE default");
            // VTK wants the first axis fastest.
            for v in field.values().t().iter() {
                let _ = writeln!(out, "{}", format_sci(*v, 9));
            }
        }
    }
    out
}

pub fn emit_field_snapshot(
    field: &TensorField,
    path: impl AsRef<Path>,
    format: SnapshotFormat,
) -> Result<()> {
    write_file(path.as_ref(), &render_field_snapshot(field, format))
}

/// Problem selection in a study config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Steady product-of-sines problem with exact solution.
    Smooth {
        #[serde(default = "default_dim3")]
        d: usize,
        #[serde(default = "default_mode2")]
        n: usize,
        kind: SchemeKind,
        #[serde(default)]
        rhs_mode: Option<RhsMode>,
    },
    /// Steady `f = 1`, `gamma = 1`, `d = 2`; measured by self-convergence.
    Singular {
        kind: SchemeKind,
        #[serde(default)]
        rhs_mode: Option<RhsMode>,
    },
    /// Evolution problem with manufactured solution `g(t) sin(pi x) sin(pi y)`.
    Manufactured {
        g: TimeProfile,
        #[serde(default = "default_cdm")]
        kind: SchemeKind,
    },
    /// Steady problem on the stripe `(-5, 5) x (-0.5, 0.5)`, `gamma = 0`;
    /// no reference solution.
    Stripe {
        #[serde(default = "default_cdm")]
        kind: SchemeKind,
    },
}

fn default_dim3() -> usize {
    3
}

fn default_mode2() -> usize {
    2
}

fn default_cdm() -> SchemeKind {
    SchemeKind::Cdm4
}

impl ProblemConfig {
    pub fn kind(&self) -> SchemeKind {
        match self {
            ProblemConfig::Smooth { kind, .. }
            | ProblemConfig::Singular { kind, .. }
            | ProblemConfig::Manufactured { kind, .. }
            | ProblemConfig::Stripe { kind } => *kind,
        }
    }

    pub fn set_kind(&mut self, new: SchemeKind) {
        match self {
            ProblemConfig::Smooth { kind, .. }
            | ProblemConfig::Singular { kind, .. }
            | ProblemConfig::Manufactured { kind, .. }
            | ProblemConfig::Stripe { kind } => *kind = new,
        }
    }

    pub fn is_evolution(&self) -> bool {
        matches!(self, ProblemConfig::Manufactured { .. })
    }

    /// Builds the problem for the pair `(s, second)`, where `second` is
    /// `gamma` for steady problems and `alpha` for evolution problems.
    pub fn build(&self, s: f64, second: f64) -> ProblemSpec {
        match *self {
            ProblemConfig::Smooth { d, n, kind, rhs_mode } => {
                let p = example_4_1(d, n, s, second, kind);
                match rhs_mode {
                    Some(m) => p.with_rhs_mode(m),
                    None => p,
                }
            }
            ProblemConfig::Singular { kind, rhs_mode } => {
                let mut p = example_4_2(s, kind);
                p.gamma = second;
                match rhs_mode {
                    Some(m) => p.with_rhs_mode(m),
                    None => p,
                }
            }
            ProblemConfig::Manufactured { g, kind } => {
                let mut p = example_4_4(g, s, second);
                p.kind = kind;
                p.rhs_mode = RhsMode::reference_default(kind);
                p
            }
            ProblemConfig::Stripe { kind } => example_4_3(s).with_kind(kind),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ProblemConfig::Smooth { d, n, .. } => format!("smooth sine product, d={d}, n={n}"),
            ProblemConfig::Singular { .. } => "singular, f=1, d=2, self-convergence".into(),
            ProblemConfig::Manufactured { g, .. } => {
                format!("manufactured evolution, g(t)={}", match g {
                    TimeProfile::Linear => "t",
                    TimeProfile::Power15 => "t^1.5",
                })
            }
            ProblemConfig::Stripe { .. } => "stripe (-5,5)x(-0.5,0.5), gamma=0".into(),
        }
    }
}

/// Which quantity a study refines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    #[default]
    Space,
    Time,
}

/// Rate expectation checked after a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateCheck {
    /// Applies to these labels; empty means every group.
    #[serde(default)]
    pub labels: Vec<String>,
    pub min: f64,
    pub max: f64,
}

/// JSON description of a convergence study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub title: String,
    pub problem: ProblemConfig,
    /// `(s, gamma)` or `(s, alpha)` pairs.
    pub pairs: Vec<[f64; 2]>,
    #[serde(default)]
    pub sweep: SweepAxis,
    /// Intervals per axis (space sweep) or step counts (time sweep).
    pub sizes: Vec<usize>,
    /// Sizes used with `--paper-scale` (full scale).
    #[serde(default)]
    pub full_sizes: Option<Vec<usize>>,
    /// Fixed intervals per axis for time sweeps.
    #[serde(default)]
    pub nx: Option<usize>,
    #[serde(default)]
    pub full_nx: Option<usize>,
    /// Fixed step count for space sweeps of evolution problems.
    #[serde(default)]
    pub nt: Option<usize>,
    pub norm: Norm,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub formats: Vec<ReportFormat>,
    #[serde(default)]
    pub rate_checks: Vec<RateCheck>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Switches to the full-scale sweep where one is configured.
    pub fn use_full_scale(&mut self) {
        if let Some(sizes) = self.full_sizes.clone() {
            self.sizes = sizes;
        }
        if let Some(nx) = self.full_nx {
            self.nx = Some(nx);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.pairs.is_empty() {
            return err("`pairs` must not be empty".into());
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return err(format!("`sizes` must be strictly increasing, got {:?}", self.sizes));
        }
        if self.sizes.len() < 2 {
            return err("rates need at least two sweep entries".into());
        }
        let evolution = self.problem.is_evolution();
        match (self.sweep, evolution) {
            (SweepAxis::Time, false) => {
                return err("time sweeps need an evolution problem".into());
            }
            (SweepAxis::Time, true) if self.nx.is_none() => {
                return err("time sweeps need a fixed `nx`".into());
            }
            (SweepAxis::Space, true) if self.nt.is_none() => {
                return err("space sweeps of evolution problems need a fixed `nt`".into());
            }
            _ => {}
        }
        if matches!(self.problem, ProblemConfig::Stripe { .. }) {
            return err("the stripe problem has no reference solution; use `steady`".into());
        }
        if matches!(self.problem, ProblemConfig::Singular { .. })
            && self.sizes.iter().any(|n| n % 2 != 0)
        {
            return err("self-convergence sizes must be even".into());
        }
        if self.threads == Some(0) {
            return err("`threads` must be positive".into());
        }
        Ok(())
    }
}

/// `(s, second)` rendered like `(0.3,0)`.
pub fn pair_label(s: f64, second: f64) -> String {
    format!("({s},{second})")
}

/// Discrete `L2`/max error against an exact solution at time `t`.
fn exact_error(u: &TensorField, problem: &ProblemSpec, t: f64, norm: Norm) -> Result<f64> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Config(format!("problem `{}` has no exact solution", problem.name)))?;
    let reference = TensorField::from_fn(u.grid(), |x| exact(x, t));
    Ok(norm.eval(&u.axpy(-1.0, &reference)?))
}

fn steady_solution(problem: &ProblemSpec, grid: &Grid) -> Result<TensorField> {
    let solver = SteadySolver::new(grid, problem.steady_params())?;
    let source = problem.source.clone();
    solver.solve_fn(|x| source(x, 0.0))
}

/// `|| u_{N/2} - u_N ||` on the coarse nodes, weighted by the fine cell volume.
pub fn self_convergence_error(
    problem: &ProblemSpec,
    n: usize,
    norm: Norm,
) -> Result<f64> {
    if n % 2 != 0 {
        return Err(Error::InvalidParameter(format!("need even N, got {n}")));
    }
    let fine_grid = problem.grid(n)?;
    let coarse_grid = problem.grid(n / 2)?;
    let fine = steady_solution(problem, &fine_grid)?;
    let coarse = steady_solution(problem, &coarse_grid)?;
    // Coarse node i sits at fine index 2i + 1.
    let fine_vals = fine.values();
    let mut diff = coarse.clone();
    for (idx, v) in diff.values_mut().indexed_iter_mut() {
        let fidx: Vec<usize> = idx.slice().iter().map(|&i| 2 * i + 1).collect();
        *v -= fine_vals[fidx.as_slice()];
    }
    Ok(match norm {
        Norm::L2 => {
            let sum: f64 = diff.as_slice().iter().map(|e| e * e).sum();
            (fine_grid.cell_volume() * sum).sqrt()
        }
        Norm::Max => diff.max_norm(),
    })
}

/// Error of one sweep point.
pub fn sweep_point_error(cfg: &StudyConfig, s: f64, second: f64, size: usize) -> Result<f64> {
    let problem = cfg.problem.build(s, second);
    problem.validate()?;
    match (&cfg.problem, cfg.sweep) {
        (ProblemConfig::Singular { .. }, _) => self_convergence_error(&problem, size, cfg.norm),
        (ProblemConfig::Smooth { .. } | ProblemConfig::Stripe { .. }, _) => {
            let grid = problem.grid(size)?;
            let u = steady_solution(&problem, &grid)?;
            exact_error(&u, &problem, 0.0, cfg.norm)
        }
        (ProblemConfig::Manufactured { .. }, axis) => {
            let (nx, nt) = match axis {
                SweepAxis::Space => (size, cfg.nt.expect("validated")),
                SweepAxis::Time => (cfg.nx.expect("validated"), size),
            };
            let grid = problem.grid(nx)?;
            let out = run(&problem, &grid, nt, &[])?;
            exact_error(&out.final_field, &problem, out.final_time, cfg.norm)
        }
    }
}

/// Runs every sweep point (in parallel, bounded by `cfg.threads`) and
/// assembles the table. Failed points are reported per row.
pub fn run_convergence(cfg: &StudyConfig) -> Result<RateTable> {
    cfg.validate()?;
    let points: Vec<(f64, f64, usize)> = cfg
        .pairs
        .iter()
        .flat_map(|&[s, p]| cfg.sizes.iter().map(move |&n| (s, p, n)))
        .collect();
    let solve_all = || -> Vec<Result<f64>> {
        points
            .par_iter()
            .map(|&(s, p, n)| sweep_point_error(cfg, s, p, n))
            .collect()
    };
    let results = with_threads(cfg.threads, || Ok(solve_all()))?;
    let rows = points
        .iter()
        .zip(results)
        .map(|(&(s, p, n), r)| {
            let (error, failure) = match r {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            RateRow {
                label: pair_label(s, p),
                s,
                param: p,
                size: n,
                error,
                rate: None,
                failure,
            }
        })
        .collect();
    let mut table = RateTable {
        title: cfg.title.clone(),
        param_name: if cfg.problem.is_evolution() { "alpha" } else { "gamma" }.into(),
        size_name: match cfg.sweep {
            SweepAxis::Space => "N",
            SweepAxis::Time => "Nt",
        }
        .into(),
        metadata: Metadata {
            problem: cfg.problem.describe(),
            discretization: cfg.problem.kind().name().into(),
            norm: cfg.norm.name().into(),
            timestamp: Metadata::timestamp_from_env(),
            git_revision: None,
        },
        rows,
    };
    table.fill_rates();
    Ok(table)
}

/// Violations of the configured rate checks, one message per offending rate.
pub fn check_rates(table: &RateTable, checks: &[RateCheck]) -> Vec<String> {
    let mut out = Vec::new();
    for check in checks {
        for row in &table.rows {
            if !check.labels.is_empty() && !check.labels.contains(&row.label) {
                continue;
            }
            if let Some(r) = row.rate {
                if !(r >= check.min && r <= check.max) {
                    out.push(format!(
                        "{} {}={}: rate {r:.3} outside [{}, {}]",
                        row.label, table.size_name, row.size, check.min, check.max
                    ));
                }
            }
        }
    }
    out
}

/// JSON description of a single steady solve or evolution run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub title: String,
    pub problem: ProblemConfig,
    pub s: f64,
    /// Steady problems only; defaults to the problem's own value.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Evolution problems only.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Intervals per axis; a single entry applies to every axis.
    pub counts: Vec<usize>,
    #[serde(default)]
    pub full_counts: Option<Vec<usize>>,
    /// Time steps on `[0, T]` (evolution only).
    #[serde(default)]
    pub nt: Option<usize>,
    /// Evolution snapshot times; the final state is always written.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_snapshot_format")]
    pub snapshot_format: SnapshotFormat,
    #[serde(default = "default_norm")]
    pub norm: Norm,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_snapshot_format() -> SnapshotFormat {
    SnapshotFormat::Csv
}

fn default_norm() -> Norm {
    Norm::L2
}

/// Field and diagnostics of [`run_solve`].
#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub problem: String,
    pub grid: Grid,
    pub field: TensorField,
    pub time: f64,
    pub steps: usize,
    /// Error against the exact solution, when one exists.
    pub error: Option<f64>,
    pub snapshots: Vec<crate::fast_l1::Snapshot>,
    pub wall_secs: f64,
}

impl SolveConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SolveConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn use_full_scale(&mut self) {
        if let Some(c) = self.full_counts.clone() {
            self.counts = c;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.counts.is_empty() || self.counts.contains(&0) {
            return err(format!("`counts` must be positive, got {:?}", self.counts));
        }
        let evolution = self.problem.is_evolution();
        if evolution && (self.nt.is_none() || self.alpha.is_none()) {
            return err("evolution runs need `nt` and `alpha`".into());
        }
        if !evolution && (self.nt.is_some() || self.alpha.is_some() || !self.snapshot_times.is_empty()) {
            return err("`nt`, `alpha` and `snapshot_times` apply to evolution runs only".into());
        }
        if evolution && self.gamma.is_some() {
            return err("`gamma` is fixed by the evolution problem".into());
        }
        if self.threads == Some(0) {
            return err("`threads` must be positive".into());
        }
        Ok(())
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        let second = match (&self.problem, self.gamma, self.alpha) {
            (p, _, Some(a)) if p.is_evolution() => a,
            (_, Some(g), _) => g,
            (ProblemConfig::Singular { .. }, None, _) => 1.0,
            _ => 0.0,
        };
        self.problem.build(self.s, second)
    }

    fn grid(&self, problem: &ProblemSpec) -> Result<Grid> {
        let d = problem.dim();
        match self.counts.as_slice() {
            [n] => problem.grid(*n),
            c if c.len() == d => problem.grid_with_counts(c),
            c => Err(Error::Config(format!(
                "`counts` has {} entries for a {d}-dimensional problem",
                c.len()
            ))),
        }
    }
}

/// Runs a [`SolveConfig`]: one steady solve, or a full evolution to `T`.
pub fn run_solve(cfg: &SolveConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    let problem = cfg.problem_spec();
    problem.validate()?;
    let grid = cfg.grid(&problem)?;
    let body = || -> Result<SolveOutput> {
        let start = Instant::now();
        let (field, time, steps, snapshots) = if problem.steady {
            (steady_solution(&problem, &grid)?, 0.0, 0, Vec::new())
        } else {
            let out = run(&problem, &grid, cfg.nt.expect("validated"), &cfg.snapshot_times)?;
            (out.final_field, out.final_time, out.steps, out.snapshots)
        };
        let wall_secs = start.elapsed().as_secs_f64();
        let error = match problem.exact {
            Some(_) => Some(exact_error(&field, &problem, time, cfg.norm)?),
            None => None,
        };
        Ok(SolveOutput {
            problem: cfg.problem.describe(),
            grid: grid.clone(),
            field,
            time,
            steps,
            error,
            snapshots,
            wall_secs,
        })
    };
    with_threads(cfg.threads, body)
}

/// JSON description of a fractional Cahn-Hilliard run on `(0, 1)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CahnHilliardConfig {
    pub title: String,
    /// Intervals per axis.
    pub n: usize,
    #[serde(default)]
    pub full_n: Option<usize>,
    pub s: f64,
    pub alpha: f64,
    #[serde(default)]
    pub kind: Option<SchemeKind>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub stabilization: Option<f64>,
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
    #[serde(default = "default_snapshot_format")]
    pub snapshot_format: SnapshotFormat,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl CahnHilliardConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CahnHilliardConfig = serde_json::from_str(text)?;
        cfg.spec()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn use_full_scale(&mut self) {
        if let Some(n) = self.full_n {
            self.n = n;
        }
    }

    /// Solver parameters; unset fields take the library defaults.
    pub fn spec(&self) -> Result<CahnHilliardSpec> {
        let d = CahnHilliardSpec::default();
        let spec = CahnHilliardSpec {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            s: self.s,
            beta: self.beta.unwrap_or(d.beta),
            alpha: self.alpha,
            dt: self.dt.unwrap_or(d.dt),
            t_final: self.t_final.unwrap_or(d.t_final),
            grid: Grid::unit(2, self.n).map_err(|e| Error::Config(e.to_string()))?,
            kind: self.kind.unwrap_or(d.kind),
            seed: self.seed.unwrap_or(d.seed),
            snapshot_times: self.snapshot_times.clone().unwrap_or(d.snapshot_times),
            stabilization: self.stabilization.unwrap_or(d.stabilization),
            nonlinearity: d.nonlinearity,
            amplitude: self.amplitude.unwrap_or(d.amplitude),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Runs `body` on a pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, body: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}

/// Scaling benchmark of the 1D fast-L1 evolution solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Interval counts for the per-step timing sweep.
    pub sizes: Vec<usize>,
    /// Step count used while sweeping `sizes`.
    pub steps_per_size: usize,
    /// Step counts for the total-time sweep.
    pub step_counts: Vec<usize>,
    /// Interval count used while sweeping `step_counts`.
    pub steps_nx: usize,
    pub s: f64,
    pub alpha: f64,
    /// Each measurement keeps the fastest of this many repetitions.
    pub repeats: usize,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![1 << 14, 1 << 15, 1 << 16],
            steps_per_size: 20,
            step_counts: vec![100, 200, 400],
            steps_nx: 1 << 12,
            s: 0.5,
            alpha: 0.5,
            repeats: 3,
            threads: None,
        }
    }
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.step_counts.len() < 2 {
            return Err(Error::Config("benchmark sweeps need at least two entries".into()));
        }
        if self.sizes.contains(&0) || self.step_counts.contains(&0) || self.steps_per_size == 0 {
            return Err(Error::Config("benchmark sizes and step counts must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("`threads` must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub n: usize,
    pub steps: usize,
    pub total_secs: f64,
    pub secs_per_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub by_size: Vec<BenchPoint>,
    pub by_steps: Vec<BenchPoint>,
    /// Least-squares slope of `log(time per step)` against `log(N)`.
    pub size_exponent: f64,
    /// Least-squares slope of `log(total time)` against `log(steps)`.
    pub steps_exponent: f64,
}

/// Fastest wall time of `repeats` runs of `steps` steps on a 1D grid with
/// `n` intervals.
pub fn time_evolution(n: usize, steps: usize, s: f64, alpha: f64, repeats: usize) -> Result<f64> {
    let grid = Grid::unit(1, n)?;
    let dt = 1.0 / steps as f64;
    let params = EvolutionParams {
        kind: SchemeKind::Fd2,
        s,
        gamma: 0.0,
        kappa: 1.0,
        alpha,
        dt,
        t_final: 1.0,
        rhs_mode: RhsMode::Nodal,
    };
    let u0 = TensorField::from_fn(&grid, |x| (std::f64::consts::PI * x[0]).sin());
    let rhs = TensorField::from_fn(&grid, |x| x[0] * (1.0 - x[0]));
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let mut solver = EvolutionSolver::new(&grid, params, u0.clone())?;
        let start = Instant::now();
        for _ in 0..steps {
            solver.step(&rhs)?;
        }
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_exponent(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Fastest of `cfg.repeats` rounds per `(n, steps)` run. Rounds sweep all runs
/// in turn so slow phases of background load hit every run alike.
fn interleaved_timings(runs: &[(usize, usize)], cfg: &BenchConfig) -> Result<Vec<BenchPoint>> {
    let mut best = vec![f64::INFINITY; runs.len()];
    for _ in 0..cfg.repeats.max(1) {
        for (b, &(n, steps)) in best.iter_mut().zip(runs) {
            *b = b.min(time_evolution(n, steps, cfg.s, cfg.alpha, 1)?);
        }
    }
    Ok(runs
        .iter()
        .zip(best)
        .map(|(&(n, steps), total)| BenchPoint {
            n,
            steps,
            total_secs: total,
            secs_per_step: total / steps as f64,
        })
        .collect())
}

pub fn benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let body = || -> Result<BenchReport> {
        let size_runs: Vec<(usize, usize)> =
            cfg.sizes.iter().map(|&n| (n, cfg.steps_per_size)).collect();
        let step_runs: Vec<(usize, usize)> =
            cfg.step_counts.iter().map(|&k| (cfg.steps_nx, k)).collect();
        let by_size = interleaved_timings(&size_runs, cfg)?;
        let by_steps = interleaved_timings(&step_runs, cfg)?;
        let size_exponent = fit_exponent(
            &by_size
                .iter()
                .map(|p| (p.n as f64, p.secs_per_step))
                .collect::<Vec<_>>(),
        );
        let steps_exponent = fit_exponent(
            &by_steps
                .iter()
                .map(|p| (p.steps as f64, p.total_secs))
                .collect::<Vec<_>>(),
        );
        Ok(BenchReport {
            by_size,
            by_steps,
            size_exponent,
            steps_exponent,
        })
    };
    with_threads(cfg.threads, body)
}
