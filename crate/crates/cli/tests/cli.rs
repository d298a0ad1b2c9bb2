//! End-to-end tests of the `blockspike` binary: exit codes, file
//! emission, determinism, and the documented flag surface. Matrix sizes
//! are kept small — correctness of the numbers is the core crate's test
//! surface; here the contract under test is the command-line behavior.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blockspike"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_model(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).expect("model file writes");
    path
}

/// Two blocks, strongly supercritical (snr ≈ 3.15).
const K2_SUPER: &str = r#"{"K": 2, "rho": [0.5, 0.5], "S": [[6.0, 1.0], [1.0, 3.0]], "prior": "gaussian"}"#;
/// One block below the transition; `prior` omitted on purpose (defaults
/// to gaussian).
const K1_SUB: &str = r#"{"K": 1, "rho": [1.0], "S": [[0.5]]}"#;

fn parse_json(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).expect("output file exists");
    serde_json::from_str(&text).expect("output file is valid JSON")
}

#[test]
fn predict_writes_expected_files() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K2_SUPER);
    let out = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--grid",
        "-1.5:1.2:120",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let prediction = parse_json(&dir.path().join("prediction.json"));
    assert_eq!(prediction["prediction"]["phase"], "supercritical");
    assert_eq!(prediction["prediction"]["topEigLimit"], 1.0);
    assert!(prediction["meta"]["modelHash"].is_string());
    assert!(prediction["meta"]["extra"]["grid"].is_string());

    let edges = parse_json(&dir.path().join("edges.json"));
    let right = edges["support"]["rightEdge"].as_f64().unwrap();
    assert!(right <= 1.0 + 1e-8, "right edge {right}");

    let density = fs::read_to_string(dir.path().join("density.csv")).unwrap();
    assert!(density.starts_with("# tool: blockspike"));
    assert!(density.contains("\nx,density,density_0,density_1\n"));
    // 120 grid points -> 120 data rows after the single header row.
    let data_rows = density
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
        .count();
    assert_eq!(data_rows, 120);
}

#[test]
fn predict_single_block_below_transition() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K1_SUB);
    let out = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--grid",
        "-1.5:1.2:80",
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let prediction = parse_json(&dir.path().join("prediction.json"));
    assert_eq!(prediction["prediction"]["phase"], "subcritical");
    let top = prediction["prediction"]["topEigLimit"].as_f64().unwrap();
    let expected = 2.0 * 0.5_f64.sqrt() - 0.5;
    assert!((top - expected).abs() <= 1e-6, "top {top} vs {expected}");
    // JSON-only format: no CSV emitted.
    assert!(!dir.path().join("density.csv").exists());
}

#[test]
fn predict_format_csv_only() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K1_SUB);
    let out = run(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--grid",
        "-1.5:1.2:80",
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(dir.path().join("density.csv").exists());
    assert!(!dir.path().join("prediction.json").exists());
    assert!(!dir.path().join("edges.json").exists());
}

#[test]
fn malformed_model_exits_2() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", "this is not json");
    let out = run(&["predict", "--model", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cli::load_model"), "{}", stderr(&out));
}

#[test]
fn missing_model_file_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "predict",
        "--model",
        dir.path().join("nope.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cli::load_model"), "{}", stderr(&out));
}

#[test]
fn invalid_model_parameters_exit_2() {
    let dir = TempDir::new().unwrap();
    // Proportions sum to 0.9: syntactically fine, semantically rejected.
    let model = write_model(
        dir.path(),
        "model.json",
        r#"{"K": 2, "rho": [0.5, 0.4], "S": [[2.0, 1.0], [1.0, 2.0]]}"#,
    );
    let out = run(&["predict", "--model", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("model::validate"), "{}", stderr(&out));
}

#[test]
fn bad_grid_spec_exits_2() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K1_SUB);
    for grid in ["1:2", "2:1:50", "0:1:1", "a:b:c"] {
        let out = run(&[
            "predict",
            "--model",
            model.to_str().unwrap(),
            "--grid",
            grid,
        ]);
        assert_eq!(out.status.code(), Some(2), "grid `{grid}` should be rejected");
    }
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["predict", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K2_SUPER);
    let run_once = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = run(&[
            "simulate",
            "--model",
            model.to_str().unwrap(),
            "--N",
            "120",
            "--samples",
            "2",
            "--seed",
            "7",
            "--bins",
            "24",
            "--raw-eigenvalues",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr(&out));
        out_dir
    };
    let a = run_once("a");
    let b = run_once("b");
    for name in [
        "simulation.json",
        "histogram.csv",
        "overlaps.csv",
        "eigenvalues.bin",
    ] {
        let bytes_a = fs::read(a.join(name)).unwrap();
        let bytes_b = fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }

    let sim = parse_json(&a.join("simulation.json"));
    assert_eq!(sim["simulation"]["topValues"].as_array().unwrap().len(), 2);
    assert_eq!(sim["meta"]["seed"], 7);
    assert_eq!(sim["meta"]["n"], 120);
    assert_eq!(sim["meta"]["samples"], 2);

    // The raw dump holds both samples' spectra: 2 × 120 eigenvalues.
    let raw = fs::read(a.join("eigenvalues.bin")).unwrap();
    assert_eq!(raw.len(), 8 + 240 * 8);

    let overlaps = fs::read_to_string(a.join("overlaps.csv")).unwrap();
    assert!(overlaps.contains("\nsample,seed,top,mu_0,mu_1,q\n"));
}

#[test]
fn simulate_n_below_k_exits_2() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K2_SUPER);
    let out = run(&[
        "simulate",
        "--model",
        model.to_str().unwrap(),
        "--N",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cli::check_n"), "{}", stderr(&out));
}

#[test]
fn simulate_above_size_guard_exits_2() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K2_SUPER);
    let out = run(&[
        "simulate",
        "--model",
        model.to_str().unwrap(),
        "--N",
        "9000",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--max-n"), "{}", stderr(&out));
}

#[test]
fn sweep_diagonal_entry_tabulates_stops() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K2_SUPER);
    let out = run(&[
        "sweep",
        "--model",
        model.to_str().unwrap(),
        "--param",
        "s:0:0",
        "--range",
        "2:8:3",
        "--N",
        "80",
        "--samples",
        "2",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    // Increasing a diagonal S entry raises the snr: monotone, no warning.
    assert!(
        !stderr(&out).contains("NonMonotoneWarning"),
        "{}",
        stderr(&out)
    );

    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let data: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("t,"))
        .collect();
    assert_eq!(data.len(), 3);
    let header = csv.lines().find(|l| l.starts_with("t,")).unwrap();
    // K = 2: t,snr + 3 per-block column groups + 5 scalars = 13 columns.
    assert_eq!(header.split(',').count(), 13);
    let snrs: Vec<f64> = data
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(snrs.windows(2).all(|w| w[1] > w[0]), "snr not increasing: {snrs:?}");

    assert!(dir.path().join("sweep.gp").exists());
    let json = parse_json(&dir.path().join("sweep.json"));
    assert_eq!(json["sweep"].as_array().unwrap().len(), 3);
    assert_eq!(json["meta"]["extra"]["param"], "s:0:0");
}

#[test]
fn sweep_rho_reparameterization_runs() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K2_SUPER);
    let out = run(&[
        "sweep",
        "--model",
        model.to_str().unwrap(),
        "--param",
        "rho:0",
        "--range",
        "0.3:0.7:3",
        "--N",
        "80",
        "--samples",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("t,"))
        .count();
    assert_eq!(rows, 3);
}

#[test]
fn sweep_bad_parameter_paths_exit_2() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K2_SUPER);
    let k1 = write_model(dir.path(), "k1.json", K1_SUB);
    // S index out of range.
    let out = run(&[
        "sweep",
        "--model",
        model.to_str().unwrap(),
        "--param",
        "s:5:0",
        "--range",
        "1:2:2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // rho sweep on a single-block model.
    let out = run(&[
        "sweep",
        "--model",
        k1.to_str().unwrap(),
        "--param",
        "rho:0",
        "--range",
        "0.3:0.6:2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Unparseable path.
    let out = run(&[
        "sweep",
        "--model",
        model.to_str().unwrap(),
        "--param",
        "sigma:1",
        "--range",
        "1:2:2",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_rho_value_outside_unit_interval_exits_2() {
    let dir = TempDir::new().unwrap();
    let model = write_model(dir.path(), "model.json", K2_SUPER);
    let out = run(&[
        "sweep",
        "--model",
        model.to_str().unwrap(),
        "--param",
        "rho:0",
        "--range",
        "0.5:1.5:3",
        "--N",
        "60",
        "--samples",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cli::apply_param"), "{}", stderr(&out));
}

#[test]
fn reproduce_density_panels_small() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "reproduce",
        "fig1",
        "--N",
        "200",
        "--bins",
        "20",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for i in 0..3 {
        assert!(dir.path().join(format!("fig1_panel{i}_prediction.json")).exists());
        assert!(dir.path().join(format!("fig1_panel{i}_density.csv")).exists());
        assert!(dir.path().join(format!("fig1_panel{i}_histogram.csv")).exists());
    }
    let script = fs::read_to_string(dir.path().join("fig1.gp")).unwrap();
    assert!(script.contains("multiplot"));

    // The derived sweep parameter is recorded, not hardcoded: each panel
    // metadata carries its own t and the snr it was solved for.
    let p0 = parse_json(&dir.path().join("fig1_panel0_prediction.json"));
    assert_eq!(p0["meta"]["extra"]["snrTarget"], "0.5");
    let t0: f64 = p0["meta"]["extra"]["t"].as_str().unwrap().parse().unwrap();
    assert!((t0 - 2.0 / 3.0).abs() <= 1e-6, "panel 0 t = {t0}");
    let p2 = parse_json(&dir.path().join("fig1_panel2_prediction.json"));
    assert_eq!(p2["prediction"]["phase"], "supercritical");

    // Panel phases land on the three sides of the transition.
    let p1 = parse_json(&dir.path().join("fig1_panel1_prediction.json"));
    assert_eq!(p0["prediction"]["phase"], "subcritical");
    assert_eq!(p1["prediction"]["phase"], "critical");
}

#[test]
fn reproduce_overlap_sweeps_small() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "reproduce",
        "fig2",
        "--N",
        "100",
        "--samples",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for name in ["diagonal", "offdiagonal"] {
        let csv = fs::read_to_string(dir.path().join(format!("fig2_{name}.csv"))).unwrap();
        assert!(csv.contains("# shape: "));
        assert!(csv.contains("# ts: "));
        let rows = csv
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("t,"))
            .count();
        assert_eq!(rows, 10, "{name} sweep should have 10 stops");
    }
    assert!(dir.path().join("fig2.gp").exists());
}

#[test]
fn reproduce_unknown_id_exits_2() {
    let out = run(&["reproduce", "fig3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cli::reproduce"), "{}", stderr(&out));
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    let text = stdout(&out);
    assert!(out.status.success(), "stdout: {text}\nstderr: {}", stderr(&out));
    assert!(text.contains("selftest: all checks passed"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
    assert!(text.contains("certificate-equivalence: pass"), "{text}");
}
