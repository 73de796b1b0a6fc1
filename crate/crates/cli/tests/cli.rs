use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clustersync::benchmark;
use clustersync::io::GainsFile;
use clustersync::scenario::ScenarioFile;
use tempfile::TempDir;

const SCALAR: &str = r#"
name = "scalar"

[plant]
a = [[0.0]]
b = [[1.0]]

[partition]
clusters = [[1, 2]]

[[graphs]]
name = "g"
adjacency = [[0.0, 0.0], [1.0, 0.0]]
pinning = [1.0, 0.0]

[switching]
phases = [{ graph = "g", dwell = 1.0 }]
epsilon = 0.1

[coupling]
gains = [2.0]

[leaders]
initial = [[1.0]]

[sim]
dt = 0.01
horizon = 1.0
seed = 5
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clustersync"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn scenario(dir: &TempDir, name: &str, file: &ScenarioFile) -> PathBuf {
    write(dir, name, &file.to_toml().unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_exit_codes() {
    let dir = TempDir::new().unwrap();
    let ok = scenario(&dir, "ok.toml", &benchmark::benchmark(0.01));
    let uncontrollable = scenario(&dir, "dec.toml", &benchmark::decoupled(0.3));
    let no_tree = scenario(&dir, "tree.toml", &benchmark::no_tree(0.3));
    let mut weak = benchmark::benchmark(0.01);
    weak.coupling.auto_margin = None;
    weak.coupling.gains = Some(vec![0.5, 0.5]);
    let weak = scenario(&dir, "weak.toml", &weak);

    assert_eq!(code(&run(&["analyze", s(&ok)])), 0);
    let out = run(&["analyze", s(&uncontrollable)]);
    assert_eq!(code(&out), 10);
    assert!(String::from_utf8_lossy(&out.stdout).contains("uncontrollable"));
    assert_eq!(code(&run(&["analyze", s(&no_tree)])), 12);
    assert_eq!(code(&run(&["analyze", s(&weak)])), 13);
    assert_eq!(code(&run(&["analyze", s(&dir.path().join("missing.toml"))])), 1);
}

#[test]
fn machine_output_is_key_value() {
    let dir = TempDir::new().unwrap();
    let ok = scenario(&dir, "ok.toml", &benchmark::benchmark(0.01));
    let out = run(&["analyze", s(&ok), "--machine"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.contains('=')));
    assert!(text.lines().any(|l| l == "verdict=certified"));
}

#[test]
fn malformed_row_names_field() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.toml", &SCALAR.replace("[1.0, 0.0]]", "[1.0]]"));
    let out = run(&["analyze", s(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("graphs[0].adjacency[1]"), "{}", stderr(&out));
}

#[test]
fn synthesize_scalar_gains() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "scalar.toml", SCALAR);
    let out_path = dir.path().join("gains.toml");
    assert_eq!(code(&run(&["synthesize-gains", s(&sc), "--out", s(&out_path)])), 0);
    let first = fs::read_to_string(&out_path).unwrap();
    let gains = GainsFile::parse(&first).unwrap();
    assert!((gains.p[0][0] - 1.0).abs() < 1e-12);
    assert!((gains.k[0][0] - 1.0).abs() < 1e-12);
    assert!(gains.are_residual <= 1e-8);

    assert_eq!(code(&run(&["synthesize-gains", s(&sc), "--out", s(&out_path)])), 0);
    assert_eq!(fs::read_to_string(&out_path).unwrap(), first);
}

#[test]
fn synthesize_refuses_unstabilizable() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, "dec.toml", &benchmark::decoupled(0.3));
    let out_path = dir.path().join("gains.toml");
    let out = run(&["synthesize-gains", s(&sc), "--out", s(&out_path)]);
    assert_eq!(code(&out), 10);
    assert!(stderr(&out).contains("not stabilizable"));
    assert!(!out_path.exists());
}

#[test]
fn simulate_writes_csv() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "scalar.toml", SCALAR);
    let csv = dir.path().join("run.csv");
    assert_eq!(code(&run(&["simulate", s(&sc), "--out", s(&csv), "--full-state"])), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,E_1,x_1_1,x_2_1");
    assert_eq!(lines.count(), 101);

    let again = dir.path().join("again.csv");
    run(&["simulate", s(&sc), "--out", s(&again), "--full-state"]);
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());
    let other = dir.path().join("other.csv");
    run(&["simulate", s(&sc), "--out", s(&other), "--full-state", "--seed", "6"]);
    assert_ne!(fs::read(&csv).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn simulate_reports_divergence() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "scalar.toml", &SCALAR.replace("horizon = 1.0", "horizon = 5.0"));
    let gains = write(&dir, "bad_gains.toml", "are_residual = 0.0\nxi = 1.0\np = [[1.0]]\nk = [[-100.0]]\ncoupling = [2.0]\n");
    let out = run(&["simulate", s(&sc), "--gains", s(&gains)]);
    assert_eq!(code(&out), 20);
    assert!(stderr(&out).contains("last finite state"));
}

#[test]
fn sweep_single_point() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "scalar.toml", SCALAR);
    let out = run(&["sweep", s(&sc), "--param", "c", "--grid", "3"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "c,final_error_ratio,decay_rate,r_squared,certified,status");
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split(',').next().unwrap().parse::<f64>().unwrap(), 3.0);
    assert!(lines[1].ends_with(",ok"));
}

#[test]
fn scenario_round_trip() {
    let file = benchmark::benchmark(0.01);
    let text = file.to_toml().unwrap();
    assert_eq!(ScenarioFile::parse(&text).unwrap(), file);
}

#[test]
fn repro_bundles() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("fig2");
    assert_eq!(code(&run(&["repro-example", "fig2", "--out", s(&out)])), 0);
    for f in ["fig2.toml", "fig2_report.txt", "fig2_gains.toml", "fig2.csv", "summary.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let written = ScenarioFile::load(&out.join("fig2.toml")).unwrap();
    assert_eq!(written.switching.epsilon, 0.01);

    let out6 = dir.path().join("fig6");
    assert_eq!(code(&run(&["repro-example", "fig6", "--out", s(&out6)])), 10);
    let summary = fs::read_to_string(out6.join("summary.csv")).unwrap();
    assert!(summary.contains("fig6_primed") && summary.contains("fig6_decoupled"));

    assert_eq!(code(&run(&["repro-example", "fig9", "--out", s(&out6)])), 2);
}
