use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn trajopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajopt"))
        .args(args)
        .current_dir(dir)
        .env_remove("TRAJOPT_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_kind(out: &Output) -> (i32, String) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let doc: Value = serde_json::from_str(stderr.trim()).unwrap_or_else(|_| panic!("not JSON: {stderr}"));
    (out.status.code().unwrap(), doc["error"]["kind"].as_str().unwrap().to_string())
}

const SMALL: &str = r#"
joints = 3

[model]
d_model = 8
heads = 2
context_layers = 1
source_layers = 1

[train]
epochs = 2
batch_size = 8
"#;

fn small_dataset(dir: &Path) {
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    ok(&trajopt(
        dir,
        &[
            "--config",
            "small.toml",
            "generate",
            "--out",
            "data",
            "--n",
            "20",
            "--min-waypoints",
            "4",
            "--max-waypoints",
            "6",
            "--seed",
            "3",
        ],
    ));
}

#[test]
fn cold_plan_of_the_bundled_example_converges() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&trajopt(dir.path(), &["plan", "--cold"]));
    let doc: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(doc["solver"]["status"], "Converged");
    assert_eq!(doc["feasibility"]["passed"], true);
    assert!(doc["objective"].as_f64().unwrap() > 0.0);

    ok(&trajopt(dir.path(), &["plan", "--cold", "--lambda", "0.2", "--out", "r.json", "--trace", "t.csv"]));
    let trace = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective,violation,step_length,penalty\n"));
    assert!(trace.lines().count() > 1);
}

#[test]
fn bench_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&trajopt(dir.path(), &["bench", "--lengths", "6,12", "--n", "20", "--seed", "7", "--out", out]));
    }
    for name in ["report.csv", "summary.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let report = std::fs::read_to_string(dir.path().join("a/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 41);
    let timings = std::fs::read_to_string(dir.path().join("a/timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 41);
}

#[test]
fn inspect_renders_a_dataset_record() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data.manifest.json")).unwrap()).unwrap();
    assert!(manifest["records"].as_u64().unwrap() >= 10);
    let data = std::fs::read_to_string(dir.path().join("data.jsonl")).unwrap();
    let first: Value = serde_json::from_str(data.lines().next().unwrap()).unwrap();
    let index = first["index"].as_u64().unwrap().to_string();

    ok(&trajopt(dir.path(), &["inspect", "--dataset", "data", "--record", &index, "--svg", "r.svg", "--csv", "r.csv"]));
    let svg = std::fs::read_to_string(dir.path().join("r.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 201);
    assert_eq!(lines[0], "t,q_0,qd_0,qdd_0,qddd_0,q_1,qd_1,qdd_1,qddd_1,q_2,qd_2,qdd_2,qddd_2");
    assert!(lines.iter().all(|l| l.split(',').count() == 13));

    let missing =
        trajopt(dir.path(), &["inspect", "--dataset", "data", "--record", "999", "--svg", "x.svg", "--csv", "x.csv"]);
    assert_eq!(error_kind(&missing), (2, "usage".into()));
}

#[test]
fn train_then_plan_and_bench_with_the_model() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let cfg = ["--config", "small.toml"];
    let train =
        [&cfg[..], &["train", "--data", "data", "--out", "m.bin", "--history", "h.csv", "--seed", "1"]].concat();
    ok(&trajopt(dir.path(), &train));
    let history = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let path = r#"[[0.0, 0.0, 0.0], [0.5, -0.4, 0.3], [0.9, 0.1, -0.2], [0.4, 0.6, 0.1]]"#;
    std::fs::write(dir.path().join("p.json"), path).unwrap();
    let plan = [&cfg[..], &["plan", "--waypoints-file", "p.json", "--model", "m.bin"]].concat();
    // a two-epoch model may not lead the solver anywhere useful
    let out = trajopt(dir.path(), &plan);
    if out.status.success() {
        let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(doc["feasibility"]["passed"], true);
        assert!(doc["timings"]["warm_start_ns"].as_u64().unwrap() > 0);
    } else {
        assert_eq!(error_kind(&out), (1, "planning_failed".into()));
    }

    let bench = [&cfg[..], &["bench", "--lengths", "4,6", "--n", "2", "--model", "m.bin", "--jobs", "2", "--out", "b"]]
        .concat();
    ok(&trajopt(dir.path(), &bench));
    let report = std::fs::read_to_string(dir.path().join("b/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 * 4);
    for method in ["cold-sqp", "warm-sqp", "model-only"] {
        assert_eq!(report.matches(&format!(",{method},")).count(), 4);
    }
    let summary = std::fs::read_to_string(dir.path().join("b/summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("comparison,warm-vs-cold,all,4,")));

    let mismatch = trajopt(dir.path(), &["plan", "--model", "m.bin"]);
    assert_eq!(error_kind(&mismatch), (2, "model_mismatch".into()));
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(error_kind(&trajopt(dir.path(), &["plan", "--bogus"])), (2, "usage".into()));
    assert_eq!(error_kind(&trajopt(dir.path(), &["frobnicate"])), (2, "usage".into()));
    assert_eq!(
        error_kind(&trajopt(dir.path(), &["plan", "--waypoints-file", "nope.json"])),
        (2, "missing_file".into())
    );
    assert_eq!(error_kind(&trajopt(dir.path(), &["plan", "--model", "nope.bin"])), (2, "missing_file".into()));
    assert_eq!(error_kind(&trajopt(dir.path(), &["plan", "--lambda", "2"])), (1, "invalid_input".into()));

    std::fs::write(dir.path().join("bad.bin"), b"not a model").unwrap();
    assert_eq!(error_kind(&trajopt(dir.path(), &["plan", "--model", "bad.bin"])), (1, "corrupt_model".into()));

    std::fs::write(dir.path().join("far.json"), "[[0, 0, 0, 0, 0, 0], [9, 0, 0, 0, 0, 0]]").unwrap();
    assert_eq!(
        error_kind(&trajopt(dir.path(), &["plan", "--waypoints-file", "far.json"])),
        (1, "infeasible_path".into())
    );

    std::fs::write(dir.path().join("odd.toml"), "speed = 3").unwrap();
    assert_eq!(error_kind(&trajopt(dir.path(), &["--config", "odd.toml", "plan"])), (2, "config".into()));

    let help = trajopt(dir.path(), &["bench", "--help"]);
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("CSV layout version 1"));
}

#[test]
fn config_path_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("three.toml"), "joints = 3").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trajopt"))
        .args(["plan", "--cold"])
        .current_dir(dir.path())
        .env("TRAJOPT_CONFIG", "three.toml")
        .output()
        .unwrap();
    assert_eq!(error_kind(&out), (2, "config".into()));
}
