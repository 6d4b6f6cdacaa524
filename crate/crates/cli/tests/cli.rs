//! End-to-end runs of the binary against the documented config schema.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run_config(dir: &Path, config: &str) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_enstrack"))
        .arg(&path)
        .output()
        .expect("binary runs")
}

fn parse_matrix_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| line.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn gramian_emits_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = format!(
        r#"{{
            "command": "gramian",
            "system": {{"A": [[0, 1], [0, 0]], "B": [[0], [1]], "C": [[1, 0]]}},
            "horizon": [0.0, 1.0],
            "out_dir": "{}"
        }}"#,
        out_dir.display()
    );
    let out = run_config(dir.path(), &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let w = parse_matrix_csv(&out_dir.join("ctrl_gramian.csv"));
    let expect = [[1.0 / 3.0, 0.5], [0.5, 1.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((w[i][j] - expect[i][j]).abs() < 1e-8);
        }
    }
    let m = parse_matrix_csv(&out_dir.join("obs_gramian.csv"));
    let expect_m = [[1.0, 0.5], [0.5, 1.0 / 3.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((m[i][j] - expect_m[i][j]).abs() < 1e-8);
        }
    }
}

#[test]
fn runs_are_deterministic_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = format!(
        r#"{{
            "command": "track-gaussian",
            "system": {{"A": [[0, 1], [0, 0]], "B": [[0], [1]], "C": [[1, 0]]}},
            "outputs": [
                {{"mean": [-1], "cov": [[3]]}},
                {{"mean": [3], "cov": [[3]]}}
            ],
            "samples_per_interval": 20,
            "seed": 0,
            "out_dir": "{}"
        }}"#,
        out_dir.display()
    );
    let first = run_config(dir.path(), &config);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let series_a = fs::read(out_dir.join("series.csv")).unwrap();
    let second = run_config(dir.path(), &config);
    assert!(second.status.success());
    let series_b = fs::read(out_dir.join("series.csv")).unwrap();
    assert_eq!(series_a, series_b);
}

#[test]
fn track_gaussian_reproduces_observed_moments() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = format!(
        r#"{{
            "command": "track-gaussian",
            "system": {{"A": [[0, 1], [0, 0]], "B": [[0], [1]], "C": [[1, 0]]}},
            "outputs": [
                {{"mean": [-1], "cov": [[3]]}},
                {{"mean": [3], "cov": [[3]]}},
                {{"mean": [5], "cov": [[3]]}},
                {{"mean": [-4], "cov": [[3]]}},
                {{"mean": [-7], "cov": [[4]]}}
            ],
            "samples_per_interval": 10,
            "out_dir": "{}"
        }}"#,
        out_dir.display()
    );
    let out = run_config(dir.path(), &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let series = fs::read_to_string(out_dir.join("series.csv")).unwrap();
    let mut lines = series.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "t,v_1,v_2,S_11,S_12,S_21,S_22");
    let expected_means = [-1.0, 3.0, 5.0, -4.0, -7.0];
    let expected_vars = [3.0, 3.0, 3.0, 3.0, 4.0];
    let mut seen = 0;
    for line in lines {
        let row: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let t = row[0];
        if (t - t.round()).abs() < 1e-12 {
            let k = t.round() as usize;
            assert!((row[1] - expected_means[k]).abs() < 1e-6, "mean at {k}");
            assert!((row[3] - expected_vars[k]).abs() < 1e-6, "variance at {k}");
            seen += 1;
        }
    }
    assert_eq!(seen, 5);
    assert!(out_dir.join("ribbon.svg").exists());
}

#[test]
fn wasserstein_of_identical_csv_measures_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let csv = "x_1,weight\n0.5,0.25\n-1.5,0.75\n";
    fs::write(dir.path().join("mu.csv"), csv).unwrap();
    let config = format!(
        r#"{{
            "command": "wasserstein",
            "mu": {{"csv": "mu.csv"}},
            "nu": {{"csv": "mu.csv"}},
            "p": 2.0,
            "out_dir": "{}"
        }}"#,
        out_dir.display()
    );
    let out = run_config(dir.path(), &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("summary is JSON");
    assert!(summary["distance"].as_f64().unwrap() < 1e-9);
}

#[test]
fn emitted_measure_csvs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = format!(
        r#"{{
            "command": "track",
            "system": {{"A": [[0]], "B": [[1]], "C": [[1]]}},
            "outputs": [
                {{"gaussian": {{"mean": [0], "cov": [[1]]}},
                  "grid": {{"min": [-4], "max": [4], "nodes": [21]}}}},
                {{"gaussian": {{"mean": [1], "cov": [[1]]}},
                  "grid": {{"min": [-3], "max": [5], "nodes": [21]}}}}
            ],
            "grid": {{"min": [-5.5], "max": [6], "nodes": [47]}},
            "mode": "coupled",
            "samples_per_interval": 4,
            "out_dir": "{}"
        }}"#,
        out_dir.display()
    );
    let out = run_config(dir.path(), &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // round-trip: re-run wasserstein between the emitted marginal and itself
    let marginal = out_dir.join("marginal_0.csv");
    assert!(marginal.exists());
    let config2 = format!(
        r#"{{
            "command": "wasserstein",
            "mu": {{"csv": "{m}"}},
            "nu": {{"csv": "{m}"}},
            "out_dir": "{o}"
        }}"#,
        m = marginal.display(),
        o = out_dir.display()
    );
    let out2 = run_config(dir.path(), &config2);
    assert!(out2.status.success(), "{}", String::from_utf8_lossy(&out2.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out2.stdout).unwrap();
    // the squared cost is zero to rounding; the root magnifies it
    assert!(summary["distance"].as_f64().unwrap() < 1e-8);
}

#[test]
fn ctrl_measure_command_matches_hand_value() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = format!(
        r#"{{
            "command": "ctrl-measure",
            "field": {{"constant": [1.0]}},
            "region": {{"box": {{"min": [0.0], "max": [1.0]}}}},
            "mu0": {{"atoms": [[-2.0]], "weights": [1.0]}},
            "mu1": {{"atoms": [[3.0]], "weights": [1.0]}},
            "t_max": 10.0,
            "out_dir": "{}"
        }}"#,
        out_dir.display()
    );
    let out = run_config(dir.path(), &config);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((summary["s"].as_f64().unwrap() - 4.0).abs() < 1e-6);
    assert!(out_dir.join("forward_cdf.csv").exists());
    assert!(out_dir.join("backward_cdf.csv").exists());
}

#[test]
fn observability_report_is_emitted() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = format!(
        r#"{{
            "command": "observability",
            "A": [[0, 1], [0, 0]],
            "C": [[0, 1]],
            "out_dir": "{}"
        }}"#,
        out_dir.display()
    );
    let out = run_config(dir.path(), &config);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("observability.json")).unwrap())
            .unwrap();
    assert_eq!(report["observable"], serde_json::Value::Bool(false));
    assert!(report["witness"]["unobservable_direction"].is_array());
}

#[test]
fn validation_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    // dimension-inconsistent system must be rejected before any solve
    let config = r#"{
        "command": "gramian",
        "system": {"A": [[0, 1], [0, 0]], "B": [[0]], "C": [[1, 0]]},
        "horizon": [0.0, 1.0],
        "out_dir": "/tmp/unused"
    }"#;
    let out = run_config(dir.path(), config);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    // unknown keys are rejected
    let config = r#"{
        "command": "gramian",
        "system": {"A": [[0]], "B": [[1]], "C": [[1]]},
        "horizon": [0.0, 1.0],
        "out_dir": "/tmp/unused",
        "typo_field": 1
    }"#;
    let out = run_config(dir.path(), config);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    // uncontrollable system: min-energy cannot invert the Gramian
    let config = format!(
        r#"{{
            "command": "min-energy",
            "system": {{"A": [[0, 0], [0, 0]], "B": [[1], [0]], "C": [[1, 0]]}},
            "x0": [0.0, 0.0],
            "x1": [0.0, 1.0],
            "horizon": [0.0, 1.0],
            "out_dir": "{}"
        }}"#,
        dir.path().join("out").display()
    );
    let out = run_config(dir.path(), &config);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "numerical");
}
