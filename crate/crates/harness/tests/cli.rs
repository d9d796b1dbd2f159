use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emflows_harness::commands::{compare, execute, Options};
use emflows_harness::output::{parse_trace_csv, trace_csv, TraceRow};
use emflows_harness::ExperimentConfig;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn emflows(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emflows"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_into(name: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = config(name);
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    emflows(&args)
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn em_conjugate_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("em_conjugate.json", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
    for (k, g) in column(&csv, "gap").iter().enumerate() {
        let g: f64 = g.parse().unwrap();
        assert!((g - 0.25 * 4f64.powi(-(k as i32))).abs() < 1e-10);
    }
    for file in ["bounds.csv", "checks.json", "overlay.svg"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let checks: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("checks.json")).unwrap()).unwrap();
    let reports = checks["checks"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r["passed"] == true));
    assert_eq!(reports[0]["summary"], "no violation found along trajectory");
    let svg = fs::read_to_string(dir.path().join("overlay.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("em_sharp_free_energy_gap"));
}

#[test]
fn violated_inequality_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("em_conjugate_lambda_too_large.json", dir.path(), &["--no-svg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("xlsi: violated at k = 0"));
    assert!(!dir.path().join("overlay.svg").exists());
    let checks: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("checks.json")).unwrap()).unwrap();
    assert_eq!(checks["checks"][0]["violated_at"], 0);
    assert_eq!(checks["checks"][0]["lambda_used"], 0.6);
}

#[test]
fn oversized_step_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("langevin_step_too_large.json", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("step size 0.2 exceeds") && err.contains("langevin_em"), "{err}");
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("em_conjugate.json"))
        .unwrap()
        .replace("\"iterations\"", "\"iters\"");
    let path = dir.path().join("bad.json");
    fs::write(&path, text).unwrap();
    let out = emflows(&["run", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("iters"), "{err}");
}

#[test]
fn trace_csv_round_trips() {
    let cfg = ExperimentConfig::load(&config("hierarchical_em.json")).unwrap();
    let outcome = execute(&cfg, &Options::default()).unwrap();
    let parsed = parse_trace_csv(&trace_csv(&outcome.trace, true)).unwrap();
    let expected: Vec<TraceRow> = outcome.trace.records.iter().map(TraceRow::from_record).collect();
    assert_eq!(parsed, expected);

    let cfg = ExperimentConfig::load(&config("langevin_particles.json")).unwrap();
    let outcome = execute(&cfg, &Options::default()).unwrap();
    let parsed = parse_trace_csv(&trace_csv(&outcome.trace, true)).unwrap();
    let expected: Vec<TraceRow> = outcome.trace.records.iter().map(TraceRow::from_record).collect();
    assert_eq!(parsed, expected);
}

#[test]
fn outputs_are_deterministic() {
    for name in ["em_conjugate.json", "langevin_particles.json"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let out = run_into(name, d.path(), &["--no-timing"]);
            assert_eq!(out.status.code(), Some(0));
        }
        for file in ["trace.csv", "bounds.csv", "checks.json", "overlay.svg"] {
            let x = fs::read(a.path().join(file)).unwrap();
            let y = fs::read(b.path().join(file)).unwrap();
            assert!(x == y, "{name}: {file} differs");
        }
    }
}

#[test]
fn seed_override_changes_particles() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_into("langevin_particles.json", a.path(), &["--no-timing", "--no-svg"]);
    run_into("langevin_particles.json", b.path(), &["--no-timing", "--no-svg", "--seed", "7"]);
    let x = fs::read_to_string(a.path().join("trace.csv")).unwrap();
    let y = fs::read_to_string(b.path().join("trace.csv")).unwrap();
    assert_eq!(x.lines().next(), y.lines().next());
    assert_ne!(x, y);
}

#[test]
fn compare_em_and_first_order() {
    let configs: Vec<ExperimentConfig> = ["em_conjugate.json", "first_order_conjugate.json"]
        .iter()
        .map(|n| ExperimentConfig::load(&config(n)).unwrap())
        .collect();
    let cmp = compare(&configs, &Options::default()).unwrap();
    assert_eq!(cmp.labels, ["em", "first_order_em"]);
    let em = cmp.factors[0].unwrap();
    let fo = cmp.factors[1].unwrap();
    // θ_{k+1} = (1 − h/2) θ_k with gap ∝ θ², h = 1/(2√2).
    let h = 0.5 / 2f64.sqrt();
    assert!((em - 0.25).abs() < 1e-9);
    assert!((fo - (1.0 - h / 2.0).powi(2)).abs() < 1e-9);
    assert!(em < fo);
}

#[test]
fn compare_cli_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let em = config("em_conjugate.json");
    let lg = config("langevin_conjugate.json");
    let out = emflows(&[
        "compare",
        em.to_str().unwrap(),
        em.to_str().unwrap(),
        lg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("em: contraction factor 0.250000"), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(dir.path().join("compare.svg").exists());
    let a = column(&csv, "gap_em");
    let b = column(&csv, "gap_em_2");
    assert_eq!(a, b);
    let lang: Vec<f64> = column(&csv, "gap_langevin_em").iter().map(|s| s.parse().unwrap()).collect();
    let em_last: f64 = a.iter().filter(|s| !s.is_empty()).last().unwrap().parse().unwrap();
    assert!(em_last < 1e-12);
    let plateau = *lang.last().unwrap();
    assert!(plateau > 1e-4);
    assert!((lang[lang.len() - 50] - plateau).abs() < 1e-6 * plateau.max(1.0));
}

#[test]
fn compare_rejects_different_models() {
    let out = emflows(&[
        "compare",
        config("em_conjugate.json").to_str().unwrap(),
        config("hierarchical_em.json").to_str().unwrap(),
        "--no-svg",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different model block"));
}

#[test]
fn certify_outputs() {
    let out = emflows(&["certify", config("em_conjugate.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let s = String::from_utf8_lossy(&out.stdout);
    assert!(s.contains("lambda = 0.381966") && s.contains("bakry_emery"), "{s}");
    assert!(s.contains("C = 9.045085"), "{s}");

    let out = emflows(&["certify", config("pushforward_conjugate.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let s = String::from_utf8_lossy(&out.stdout);
    assert!(s.contains("lambda = 0.09549") && s.contains("contraction: L_T = 2"), "{s}");

    let out = emflows(&["certify", config("indefinite_quadratic.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no certificate"));
}

#[test]
fn every_bundled_config_parses() {
    for entry in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap();
    }
}
