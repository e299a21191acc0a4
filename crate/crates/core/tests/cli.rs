use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_consensus-lab"));
    cmd.env_remove("CONSENSUS_LAB_THREADS");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn generate(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let path = dir.join(name);
    run_ok(bin().arg("generate").args(args).arg("--out").arg(&path));
    path
}

fn edge_count(path: &Path) -> usize {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["edges"].as_array().unwrap().len()
}

fn analyze(path: &Path) -> Value {
    let out = run_ok(bin().arg("analyze").arg(path));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

fn fit_rate(rows: &[Vec<f64>], from: f64) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r[0] >= from)
        .map(|r| (r[0], r[1].ln()))
        .collect();
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    -sxy / sxx
}

fn scenario(dir: &Path, name: &str, body: Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body.to_string()).unwrap();
    path
}

#[test]
fn generate_edge_counts() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        edge_count(&generate(
            dir.path(),
            "p.json",
            &["--family", "path", "--n", "10"]
        )),
        9
    );
    let c = generate(
        dir.path(),
        "c.json",
        &["--family", "cycle-power", "--n", "100", "--d", "4"],
    );
    assert_eq!(edge_count(&c), 200);
    assert_eq!(
        edge_count(&generate(
            dir.path(),
            "k.json",
            &["--family", "complete", "--n", "6"]
        )),
        15
    );
    assert_eq!(
        edge_count(&generate(dir.path(), "s.json", &["--family", "star", "--n", "6"])),
        5
    );
}

#[test]
fn bipartite_generation_is_seeded() {
    let dir = TempDir::new().unwrap();
    let args = [
        "--family",
        "bipartite-perm",
        "--m",
        "100",
        "--d",
        "4",
        "--seed",
        "7",
    ];
    let a = fs::read(generate(dir.path(), "a.json", &args)).unwrap();
    let b = fs::read(generate(dir.path(), "b.json", &args)).unwrap();
    assert_eq!(a, b);
    let mut other = args;
    other[7] = "8";
    assert_ne!(a, fs::read(generate(dir.path(), "c.json", &other)).unwrap());
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["n"], 200);
    let edges = v["edges"].as_array().unwrap();
    assert!(edges.len() <= 400 && edges.len() > 300);
}

#[test]
fn generate_writes_stdout_without_out() {
    let out = run_ok(bin().args(["generate", "--family", "path", "--n", "3"]));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["edges"], serde_json::json!([[1, 2, 1.0], [2, 3, 1.0]]));
}

#[test]
fn analyze_reports_closed_forms() {
    let dir = TempDir::new().unwrap();
    let p = analyze(&generate(
        dir.path(),
        "p.json",
        &["--family", "path", "--n", "100"],
    ));
    let expected = 4.0 * (std::f64::consts::PI / 200.0).sin().powi(2);
    assert!((p["alpha"].as_f64().unwrap() - expected).abs() <= 1e-9 * expected);
    assert_eq!(p["kappa"].as_f64().unwrap(), 99.0);

    let k = analyze(&generate(
        dir.path(),
        "k.json",
        &["--family", "complete", "--n", "10"],
    ));
    assert!((k["rho"].as_f64().unwrap() - 0.9).abs() <= 1e-12);
    assert!((k["alpha"].as_f64().unwrap() - 10.0).abs() <= 1e-9);
    assert_eq!(k["convergent"], true);

    let s = analyze(&generate(dir.path(), "s.json", &["--family", "star", "--n", "7"]));
    assert!((s["kappa"].as_f64().unwrap() - 6.0).abs() <= 1e-12);
}

#[test]
fn simulate_without_noise_decays_at_connectivity() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "p.json", &["--family", "path", "--n", "6"]);
    let alpha = 4.0 * (std::f64::consts::PI / 12.0).sin().powi(2);
    let horizon = 15.0 / alpha;
    let sc = scenario(
        dir.path(),
        "det.json",
        serde_json::json!({"graph_file": "p.json", "T": horizon, "dt": 0.01, "x0": [1, -2, 0.5, 3, 0, 1]}),
    );
    let out = run_ok(bin().arg("simulate").arg(&sc));
    let (header, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(header, ["time", "off_consensus"]);
    assert!(fit_rate(&rows, 0.5 * horizon) >= alpha - 0.02);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fitted decay rate"));
}

#[test]
fn simulate_with_noise_reports_plateau_and_prediction() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "k.json", &["--family", "complete", "--n", "5"]);
    let sc = scenario(
        dir.path(),
        "noisy.json",
        serde_json::json!({"graph_file": "k.json", "sigma": 0.3, "T": 2.0, "n_paths": 2000, "seed": 4, "records": 20}),
    );
    let csv = dir.path().join("out.csv");
    run_ok(bin().arg("simulate").arg(&sc).arg("--out").arg(&csv));
    let (header, rows) = csv_rows(&fs::read_to_string(&csv).unwrap());
    assert_eq!(
        header,
        [
            "time",
            "second_moment",
            "standard_error",
            "prediction",
            "stationary_limit"
        ]
    );
    let limit = 0.09 / 2.0 * 4.0 / 5.0;
    for row in rows.iter().skip(1) {
        assert!((row[1] - row[3]).abs() <= 5.0 * row[2], "row {row:?}");
        assert!((row[4] - limit).abs() <= 1e-12);
    }
    let late: Vec<f64> = rows.iter().filter(|r| r[0] >= 1.6).map(|r| r[1]).collect();
    let plateau = late.iter().sum::<f64>() / late.len() as f64;
    assert!((plateau - limit).abs() <= 0.05 * limit);

    let again = dir.path().join("again.csv");
    run_ok(
        bin()
            .arg("simulate")
            .arg(&sc)
            .arg("--out")
            .arg(&again)
            .env("CONSENSUS_LAB_THREADS", "2"),
    );
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn simulate_per_path_columns() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "k.json", &["--family", "complete", "--n", "4"]);
    let sc = scenario(
        dir.path(),
        "paths.json",
        serde_json::json!({"graph_file": "k.json", "sigma": 0.1, "T": 0.5, "n_paths": 3, "records": 5}),
    );
    let out = run_ok(bin().args(["--seed", "3", "simulate", "--per-path"]).arg(&sc));
    let (header, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(header, ["time", "path_0", "path_1", "path_2"]);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn switching_scenario_converges() {
    let dir = TempDir::new().unwrap();
    generate(dir.path(), "p.json", &["--family", "path", "--n", "5"]);
    generate(
        dir.path(),
        "c.json",
        &["--family", "cycle-power", "--n", "5", "--d", "2"],
    );
    let sc = scenario(
        dir.path(),
        "switch.json",
        serde_json::json!({
            "graph_file": "p.json", "schedule": "switching", "switch_period": 0.5,
            "switch_graphs": ["c.json"], "T": 60.0, "dt": 0.01, "x0": [2, 0, -1, 0, 3]
        }),
    );
    let out = run_ok(bin().arg("simulate").arg(&sc));
    let (_, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    let first = rows.first().unwrap()[1];
    let last = rows.last().unwrap()[1];
    assert!(last < 1e-3 * first);
    assert!(String::from_utf8_lossy(&out.stderr).contains("min margin"));
}

#[test]
fn reproduce_table_layout() {
    let out = run_ok(bin().args(["reproduce-table", "--seeds", "3"]));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "row,n100,n200,n400,limit");
    let cycle: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(cycle[0], "alpha_cycle_power");
    let rounded: Vec<f64> = cycle[1..4]
        .iter()
        .map(|c| (c.parse::<f64>().unwrap() * 1000.0).round() / 1000.0)
        .collect();
    assert_eq!(rounded, [0.020, 0.005, 0.001]);
    let bip: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(bip[0], "alpha_bipartite_median");
    assert_eq!(bip[4], format!("{:.4}", 4.0 - 2.0 * 3f64.sqrt()));
    assert_eq!(bip[4], "0.5359");
}

#[test]
fn verify_passes() {
    let out = run_ok(bin().args(["verify", "--threads", "2"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("9/9 checks passed"), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn bad_parameters_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["generate", "--family", "cycle-power", "--n", "10", "--d", "3"],
        vec!["generate", "--family", "path", "--n", "1"],
        vec!["generate", "--family", "bipartite-perm", "--d", "4"],
        vec!["generate", "--family", "hypercube", "--n", "4"],
        vec!["--threads", "0", "verify"],
        vec!["reproduce-table", "--seeds", "0"],
        vec!["analyze", "missing.json"],
    ];
    for args in cases {
        let out = bin().args(&args).current_dir(dir.path()).output().unwrap();
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty(), "{args:?} printed nothing to stderr");
    }
    generate(dir.path(), "p.json", &["--family", "path", "--n", "3"]);
    let bad = [
        serde_json::json!({"graph_file": "p.json", "T": 1.0, "x0": [1, 2]}),
        serde_json::json!({"graph_file": "p.json", "T": 1.0, "unknown": 1}),
        serde_json::json!({"graph_file": "p.json", "T": -1.0}),
        serde_json::json!({"graph_file": "p.json", "T": 1.0, "schedule": "switching"}),
    ];
    for (k, body) in bad.into_iter().enumerate() {
        let sc = scenario(dir.path(), &format!("bad{k}.json"), body.clone());
        let out = bin().arg("simulate").arg(&sc).output().unwrap();
        assert!(!out.status.success(), "{body} succeeded");
    }
}

#[test]
fn threads_env_var_is_accepted() {
    let out = bin()
        .args(["generate", "--family", "path", "--n", "4"])
        .env("CONSENSUS_LAB_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    let bad = bin()
        .args(["generate", "--family", "path", "--n", "4"])
        .env("CONSENSUS_LAB_THREADS", "many")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
