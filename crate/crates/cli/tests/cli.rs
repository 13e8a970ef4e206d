use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    workspace().join("configs").join(name)
}

fn sfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfl"))
        .args(args)
        .env_remove("SFL_OUT_DIR")
        .env_remove("SFL_THREADS")
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn fem_table_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfl(&[
        "convergence",
        "--config",
        config("smooth_fem_3d.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let got = std::fs::read_to_string(dir.path().join("smooth_3d_problem_linear_fem.csv")).unwrap();
    let golden =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/smooth_fem_3d.csv")).unwrap();
    let (got, golden): (Vec<&str>, Vec<&str>) = (got.lines().collect(), golden.lines().collect());
    assert_eq!(got.len(), golden.len());
    assert_eq!(got[0], golden[0]);
    for (g, e) in got[1..].iter().zip(&golden[1..]) {
        let (g, e): (Vec<&str>, Vec<&str>) = (g.split(',').collect(), e.split(',').collect());
        assert_eq!(g.len(), e.len());
        for (k, (a, b)) in g.iter().zip(&e).enumerate() {
            // Error column: allow last-digit noise from a different FFT backend.
            if k == g.len() - 3 {
                let (a, b): (f64, f64) = (a.parse().unwrap(), b.parse().unwrap());
                assert!(((a - b) / b).abs() < 1e-6, "{a} vs {b}");
            } else {
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "study.json",
        r#"{"title": "det", "problem": {"id": "smooth", "d": 2, "n": 1, "kind": "cdm4"},
            "pairs": [[0.5, 1]], "sizes": [8, 16, 32], "norm": "l2"}"#,
    );
    let mut texts = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = sfl(&[
            "convergence",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--format",
            "json",
            "--format",
            "csv",
            "--threads",
            if run == "a" { "1" } else { "3" },
        ]);
        assert_eq!(code(&out), 0);
        texts.push((
            std::fs::read(out_dir.join("det.json")).unwrap(),
            std::fs::read(out_dir.join("det.csv")).unwrap(),
        ));
    }
    assert_eq!(texts[0], texts[1]);
    let json = String::from_utf8(texts[0].0.clone()).unwrap();
    assert!(json.contains("2023-11-14T22:13:20Z"));
}

#[test]
fn overrides_replace_pairs_and_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfl(&[
        "convergence",
        "--config",
        config("smooth_cdm4_3d.json").to_str().unwrap(),
        "--s",
        "0.5",
        "--gamma",
        "1",
        "--kind",
        "fd2",
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "csv",
    ]);
    // The config's fourth-order rate checks still apply, and second order misses them.
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("smooth_3d_problem_cdm4.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let rates: Vec<f64> = csv.lines().skip(2).map(|l| l.rsplit(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(rates.iter().all(|r| (r - 2.0).abs() < 0.1), "{rates:?}");
}

#[test]
fn violated_rate_checks_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "study.json",
        r#"{"title": "chk", "problem": {"id": "smooth", "d": 1, "n": 1, "kind": "fd2"},
            "pairs": [[0.5, 0]], "sizes": [8, 16], "norm": "l2",
            "rate_checks": [{"min": 3.9, "max": 4.1}]}"#,
    );
    let out = sfl(&["convergence", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rate check"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let bad = write(dir.path(), "bad.json", r#"{"title": "x", "pairs": []}"#);
    let unknown = write(
        dir.path(),
        "unknown.json",
        r#"{"title": "x", "problem": {"id": "smooth", "kind": "fem"}, "pairs": [[0.5, 0]],
            "sizes": [8, 16], "norm": "l2", "colour": "blue"}"#,
    );
    let decreasing = write(
        dir.path(),
        "dec.json",
        r#"{"title": "x", "problem": {"id": "smooth", "kind": "fem"}, "pairs": [[0.5, 0]],
            "sizes": [16, 8], "norm": "l2"}"#,
    );
    for args in [
        vec!["steady"],
        vec!["steady", "--config", missing.to_str().unwrap()],
        vec!["convergence", "--config", bad.to_str().unwrap()],
        vec!["convergence", "--config", unknown.to_str().unwrap()],
        vec!["convergence", "--config", decreasing.to_str().unwrap()],
        vec!["steady", "--config", config("manufactured.json").to_str().unwrap()],
        vec!["steady", "--config", config("stripe.json").to_str().unwrap(), "--alpha", "0.5"],
        vec!["convergence", "--config", config("smooth_fem_3d.json").to_str().unwrap(), "--format", "pdf"],
        vec!["cahn-hilliard", "--config", config("cahn_hilliard.json").to_str().unwrap(), "--s", "1.5"],
        vec!["bench", "--threads", "0"],
    ] {
        let out = sfl(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn solver_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "blow.json",
        r#"{"title": "blow", "n": 16, "s": 1.0, "alpha": 1.0, "dt": 0.05, "t_final": 1.0,
            "stabilization": 0, "amplitude": 3.0}"#,
    );
    let out = sfl(&["cahn-hilliard", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("blew up"));
}

#[test]
fn steady_and_evolve_write_fields_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = sfl(&["steady", "--config", config("stripe.json").to_str().unwrap(), "--nx", "40", "--out", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("stripe_domain.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,u"));
    assert_eq!(csv.lines().count(), 1 + 39 * 39);

    let out = sfl(&[
        "evolve",
        "--config",
        config("manufactured.json").to_str().unwrap(),
        "--nx",
        "16",
        "--nt",
        "40",
        "--format",
        "vtk",
        "--out",
        d,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["manufactured_evolution.vtk", "manufactured_evolution_t0.25.vtk", "manufactured_evolution_t0.5.vtk"] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.contains("DIMENSIONS 15 15 1"), "{name}");
    }
    let summary = std::fs::read_to_string(dir.path().join("manufactured_evolution_summary.json")).unwrap();
    assert!(summary.contains("\"steps\": 40"));
}

#[test]
fn cahn_hilliard_honours_seed_and_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = Command::new(env!("CARGO_BIN_EXE_sfl"))
            .args(["cahn-hilliard", "--config", config("cahn_hilliard.json").to_str().unwrap()])
            .args(["--nx", "16", "--nt", "20", "--seed", seed])
            .env("SFL_OUT_DIR", &out_dir)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(out_dir.join("cahn_hilliard_coarsening_s_0_8_alpha_0_8_t0.5.csv")).unwrap()
    };
    let a = run("7", "a");
    assert_eq!(a, run("7", "b"));
    assert_ne!(a, run("8", "c"));
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bench.json",
        r#"{"sizes": [256, 512], "steps_per_size": 5, "step_counts": [5, 10], "steps_nx": 128,
            "s": 0.5, "alpha": 0.5, "repeats": 1}"#,
    );
    let out = sfl(&["bench", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("bench.json")).unwrap();
    assert!(text.contains("size_exponent") && text.contains("steps_exponent"));
}
