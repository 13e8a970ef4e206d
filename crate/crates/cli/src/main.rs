use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sfl_core::harness::{
    benchmark, check_rates, emit_field_snapshot, emit_report, render_report, run_convergence, run_solve,
    with_threads, BenchConfig, CahnHilliardConfig, ReportFormat, SnapshotFormat, SolveConfig, StudyConfig,
    SweepAxis,
};
use sfl_core::{run_cahn_hilliard, Error, SchemeKind, TensorField};

const GIT_REVISION: &str = env!("SFL_GIT_REVISION");

#[derive(Parser)]
#[command(name = "sfl", version, about = "Spectral fractional Laplacian and fast L1 solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one steady problem and write the discrete solution.
    Steady(Options),
    /// Run a time-fractional evolution to its final time.
    Evolve(Options),
    /// Run a convergence study and write the error/rate table.
    Convergence(Options),
    /// Run the fractional Cahn-Hilliard coarsening experiment.
    CahnHilliard(Options),
    /// Time the fast L1 solver against grid size and step count.
    Bench(Options),
}

#[derive(Args, Debug, Default)]
struct Options {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Intervals per axis.
    #[arg(long)]
    nx: Option<usize>,
    /// Number of time steps.
    #[arg(long)]
    nt: Option<usize>,
    /// Fractional power of the spatial operator.
    #[arg(long)]
    s: Option<f64>,
    /// Caputo order.
    #[arg(long)]
    alpha: Option<f64>,
    /// Reaction coefficient.
    #[arg(long)]
    gamma: Option<f64>,
    /// Spatial discretization: fem, cdm4 or fd2.
    #[arg(long)]
    kind: Option<SchemeKind>,
    /// Output directory.
    #[arg(long, env = "SFL_OUT_DIR")]
    out: Option<PathBuf>,
    /// Output format; repeat for several. Reports: csv, json, markdown. Fields: csv, vtk.
    #[arg(long)]
    format: Vec<String>,
    /// Seed of the random initial data.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "SFL_THREADS")]
    threads: Option<usize>,
    /// Use the full-scale sizes from the config.
    #[arg(long)]
    paper_scale: bool,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config_error() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Steady(o) => solve(o, false),
        Command::Evolve(o) => solve(o, true),
        Command::Convergence(o) => convergence(o),
        Command::CahnHilliard(o) => cahn_hilliard(o),
        Command::Bench(o) => bench(o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn require_config(o: &Options) -> Result<&Path, Failure> {
    o.config.as_deref().ok_or_else(|| Failure::config("--config <path> is required"))
}

/// Reads a config, reporting unreadable files as configuration errors.
fn load<T>(path: &Path, parse: impl Fn(&str) -> sfl_core::Result<T>) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Rejects flags that the subcommand cannot honour.
fn reject(o: &Options, flags: &[(&str, bool)]) -> Outcome {
    if let Some((name, _)) = flags.iter().find(|(_, set)| *set) {
        return Err(Failure::config(format!("--{name} does not apply here")));
    }
    if o.threads == Some(0) {
        return Err(Failure::config("--threads must be positive"));
    }
    Ok(())
}

fn out_dir(o: &Options, configured: Option<&Path>) -> PathBuf {
    o.out.clone().or_else(|| configured.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("out"))
}

/// File-name stem of a title: lowercase alphanumerics joined by single `_`.
fn slug(title: &str) -> String {
    let words: Vec<String> = title
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect();
    if words.is_empty() {
        "run".into()
    } else {
        words.join("_")
    }
}

fn snapshot_formats(o: &Options, default: SnapshotFormat) -> Result<Vec<SnapshotFormat>, Failure> {
    if o.format.is_empty() {
        return Ok(vec![default]);
    }
    o.format
        .iter()
        .map(|f| match f.to_ascii_lowercase().as_str() {
            "csv" => Ok(SnapshotFormat::Csv),
            "vtk" => Ok(SnapshotFormat::Vtk),
            other => Err(Failure::config(format!("unknown field format `{other}` (expected csv or vtk)"))),
        })
        .collect()
}

/// Writes `dir/name.<ext>` per format. `name` may contain dots (`run_t0.5`).
fn write_fields(field: &TensorField, dir: &Path, name: &str, formats: &[SnapshotFormat]) -> Result<Vec<PathBuf>, Failure> {
    let mut written = Vec::new();
    for &f in formats {
        let path = dir.join(format!("{name}.{}", f.extension()));
        emit_field_snapshot(field, &path, f)?;
        written.push(path);
    }
    Ok(written)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure { code: 3, message: format!("{}: {e}", dir.display()) })?;
    }
    std::fs::write(path, text).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

fn time_tag(t: f64) -> String {
    format!("t{t}")
}

fn solve(o: Options, evolution: bool) -> Outcome {
    let path = require_config(&o)?;
    let mut cfg = load(path, SolveConfig::from_json)?;
    if cfg.problem.is_evolution() != evolution {
        let hint = if evolution { "steady" } else { "evolve" };
        return Err(Failure::config(format!("{} describes a {hint} run", path.display())));
    }
    reject(&o, &[("seed", o.seed.is_some())])?;
    if o.paper_scale {
        cfg.use_full_scale();
    }
    if let Some(n) = o.nx {
        cfg.counts = vec![n];
    }
    if let Some(s) = o.s {
        cfg.s = s;
    }
    if let Some(k) = o.kind {
        cfg.problem.set_kind(k);
    }
    cfg.nt = o.nt.or(cfg.nt);
    cfg.alpha = o.alpha.or(cfg.alpha);
    cfg.gamma = o.gamma.or(cfg.gamma);
    cfg.threads = o.threads.or(cfg.threads);
    cfg.validate()?;
    let formats = snapshot_formats(&o, cfg.snapshot_format)?;
    let out = run_solve(&cfg)?;

    let dir = out_dir(&o, cfg.output.as_deref());
    let name = slug(&cfg.title);
    let mut files = write_fields(&out.field, &dir, &name, &formats)?;
    for snap in &out.snapshots {
        let snap_name = format!("{name}_{}", time_tag(snap.requested_time));
        files.extend(write_fields(&snap.field, &dir, &snap_name, &formats)?);
    }
    let summary = json!({
        "title": cfg.title,
        "problem": out.problem,
        "discretization": cfg.problem.kind().name(),
        "s": cfg.s,
        "gamma": cfg.gamma,
        "alpha": cfg.alpha,
        "shape": out.grid.interior_shape(),
        "steps": out.steps,
        "final_time": out.time,
        "norm": cfg.norm.name(),
        "error": out.error,
        "max_abs": out.field.max_norm(),
        "wall_secs": out.wall_secs,
        "git_revision": GIT_REVISION,
    });
    let summary_path = dir.join(format!("{name}_summary.json"));
    write_json(&summary_path, &summary)?;

    println!("{}: {}", cfg.title, out.problem);
    println!("  shape {:?}, {} steps, {:.3}s", out.grid.interior_shape(), out.steps, out.wall_secs);
    match out.error {
        Some(e) => println!("  {} error {}", cfg.norm.name(), sfl_core::harness::format_sci(e, 6)),
        None => println!("  max |u| {}", sfl_core::harness::format_sci(out.field.max_norm(), 6)),
    }
    for f in files.iter().chain([&summary_path]) {
        println!("  wrote {}", f.display());
    }
    Ok(())
}

fn convergence(o: Options) -> Outcome {
    let path = require_config(&o)?;
    let mut cfg = load(path, StudyConfig::from_json)?;
    if o.paper_scale {
        cfg.use_full_scale();
    }
    let evolution = cfg.problem.is_evolution();
    reject(
        &o,
        &[
            ("alpha", o.alpha.is_some() && !evolution),
            ("gamma", o.gamma.is_some() && evolution),
            ("nx", o.nx.is_some() && cfg.sweep != SweepAxis::Time),
            ("nt", o.nt.is_some() && !(evolution && cfg.sweep == SweepAxis::Space)),
        ],
    )?;
    if let Some(k) = o.kind {
        cfg.problem.set_kind(k);
    }
    let second = if evolution { o.alpha } else { o.gamma };
    match (o.s, second) {
        (Some(s), Some(p)) => cfg.pairs = vec![[s, p]],
        (Some(s), None) => cfg.pairs.iter_mut().for_each(|pair| pair[0] = s),
        (None, Some(p)) => cfg.pairs.iter_mut().for_each(|pair| pair[1] = p),
        (None, None) => {}
    }
    cfg.pairs.dedup();
    cfg.nx = o.nx.or(cfg.nx);
    cfg.nt = o.nt.or(cfg.nt);
    cfg.seed = o.seed.or(cfg.seed);
    cfg.threads = o.threads.or(cfg.threads);
    cfg.validate()?;
    let formats: Vec<ReportFormat> = if o.format.is_empty() {
        if cfg.formats.is_empty() {
            vec![ReportFormat::Csv]
        } else {
            cfg.formats.clone()
        }
    } else {
        o.format.iter().map(|f| f.parse()).collect::<sfl_core::Result<_>>()?
    };

    let mut table = run_convergence(&cfg)?;
    if !GIT_REVISION.is_empty() {
        table.metadata.git_revision = Some(GIT_REVISION.into());
    }
    let dir = out_dir(&o, cfg.output.as_deref());
    let stem = dir.join(slug(&cfg.title));
    print!("{}", render_report(&table, ReportFormat::Markdown)?);
    for f in formats {
        let path = stem.with_extension(f.extension());
        emit_report(&table, f, &path)?;
        println!("wrote {}", path.display());
    }

    let failed: Vec<String> = table
        .failures()
        .map(|r| format!("{} {}={}: {}", r.label, table.size_name, r.size, r.failure.as_deref().unwrap_or("")))
        .collect();
    let violations = check_rates(&table, &cfg.rate_checks);
    for v in &violations {
        eprintln!("rate check: {v}");
    }
    if !failed.is_empty() {
        return Err(Failure {
            code: 3,
            message: format!("{} sweep point(s) failed: {}", failed.len(), failed.join("; ")),
        });
    }
    if !violations.is_empty() {
        return Err(Failure { code: 1, message: format!("{} rate check(s) violated", violations.len()) });
    }
    Ok(())
}

fn cahn_hilliard(o: Options) -> Outcome {
    let path = require_config(&o)?;
    let mut cfg = load(path, CahnHilliardConfig::from_json)?;
    reject(&o, &[("gamma", o.gamma.is_some())])?;
    if o.paper_scale {
        cfg.use_full_scale();
    }
    cfg.n = o.nx.unwrap_or(cfg.n);
    cfg.s = o.s.unwrap_or(cfg.s);
    cfg.alpha = o.alpha.unwrap_or(cfg.alpha);
    cfg.kind = o.kind.or(cfg.kind);
    cfg.seed = o.seed.or(cfg.seed);
    cfg.threads = o.threads.or(cfg.threads);
    let mut spec = cfg.spec()?;
    if let Some(nt) = o.nt {
        spec.dt = spec.t_final / nt as f64;
        spec.validate()?;
    }
    let formats = snapshot_formats(&o, cfg.snapshot_format)?;
    let out = with_threads(cfg.threads, || run_cahn_hilliard(&spec))?;

    let dir = out_dir(&o, cfg.output.as_deref());
    let name = slug(&cfg.title);
    let mut files = write_fields(&out.initial, &dir, &format!("{name}_{}", time_tag(0.0)), &formats)?;
    for snap in &out.snapshots {
        let snap_name = format!("{name}_{}", time_tag(snap.requested_time));
        files.extend(write_fields(&snap.field, &dir, &snap_name, &formats)?);
    }
    let u = out.final_field.as_slice();
    let summary = json!({
        "title": cfg.title,
        "discretization": spec.kind.name(),
        "s": spec.s,
        "alpha": spec.alpha,
        "epsilon": spec.epsilon,
        "intervals": cfg.n,
        "dt": spec.dt,
        "steps": out.steps,
        "seed": spec.seed,
        "stabilization": spec.stabilization,
        "peak_max_norm": out.peak_max_norm,
        "final_above_half": u.iter().filter(|&&v| v > 0.5).count(),
        "final_below_minus_half": u.iter().filter(|&&v| v < -0.5).count(),
        "snapshot_times": out.snapshots.iter().map(|s| s.time).collect::<Vec<_>>(),
        "mean_step_secs": out.timing.mean_secs(),
        "git_revision": GIT_REVISION,
    });
    let summary_path = dir.join(format!("{name}_summary.json"));
    write_json(&summary_path, &summary)?;

    println!(
        "{}: {} steps, peak max|u| {:.4}, {:.3} ms/step",
        cfg.title,
        out.steps,
        out.peak_max_norm,
        1e3 * out.timing.mean_secs()
    );
    for f in files.iter().chain([&summary_path]) {
        println!("  wrote {}", f.display());
    }
    Ok(())
}

fn bench(o: Options) -> Outcome {
    let mut cfg = match &o.config {
        Some(path) => load(path, BenchConfig::from_json)?,
        None => BenchConfig::default(),
    };
    reject(
        &o,
        &[
            ("gamma", o.gamma.is_some()),
            ("kind", o.kind.is_some()),
            ("seed", o.seed.is_some()),
            ("paper-scale", o.paper_scale),
        ],
    )?;
    if let Some(n) = o.nx {
        cfg.steps_nx = n;
    }
    if let Some(nt) = o.nt {
        cfg.steps_per_size = nt;
    }
    cfg.s = o.s.unwrap_or(cfg.s);
    cfg.alpha = o.alpha.unwrap_or(cfg.alpha);
    cfg.threads = o.threads.or(cfg.threads);
    if o.format.iter().any(|f| !f.eq_ignore_ascii_case("json")) {
        return Err(Failure::config("bench writes json only"));
    }
    cfg.validate()?;
    let report = benchmark(&cfg)?;

    println!("{:>10} {:>7} {:>12} {:>12}", "N", "steps", "total (s)", "per step (s)");
    for p in report.by_size.iter().chain(&report.by_steps) {
        println!("{:>10} {:>7} {:>12.4e} {:>12.4e}", p.n, p.steps, p.total_secs, p.secs_per_step);
    }
    println!("per-step exponent in N: {:.3}", report.size_exponent);
    println!("total-time exponent in steps: {:.3}", report.steps_exponent);
    let path = out_dir(&o, None).join("bench.json");
    let value = serde_json::to_value(&report).map_err(Error::from)?;
    write_json(&path, &json!({ "config": cfg, "report": value, "git_revision": GIT_REVISION }))?;
    println!("wrote {}", path.display());
    Ok(())
}
