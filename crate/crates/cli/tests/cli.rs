//! End-to-end checks of the binary: exit codes, file outputs, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spoar"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spoar")
}

fn assert_status(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn generate_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let cfg = configs_dir().join("system_deg2.json");
    let r = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "1300",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_status(&r, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1301, "header plus 1300 rows");
    assert!(text.starts_with("t,y1,y2\n"));
    let sidecar = dir.path().join("traj.spec.json");
    let spec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sidecar).unwrap()).unwrap();
    assert_eq!(spec["seed"], 7);
    assert_eq!(spec["n"], 1300);
    assert_eq!(spec["system"]["deg"], 2);
    // resolved defaults are echoed
    assert_eq!(spec["system"]["burn_in"], 200);

    // byte-identical rerun
    let first = std::fs::read(&out).unwrap();
    let r = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "1300",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_status(&r, 0);
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn generate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out_path = dir.path().join("t.csv");
    let r = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "10",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_status(&r, 1);

    // structurally valid JSON failing domain validation also exits 1
    std::fs::write(&cfg, r#"{"a":[[1.0,2.0]],"q":[[0.1]],"deg":2}"#).unwrap();
    let r = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "10",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_status(&r, 1);
}

#[test]
fn unknown_flag_is_usage_error() {
    let r = run(&["generate", "--nonsense"]);
    assert_status(&r, 1);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(
        err.contains("Usage") || err.contains("usage"),
        "stderr: {err}"
    );
}

#[test]
fn train_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let sys_cfg = configs_dir().join("system_deg2.json");
    assert_status(
        &run(&[
            "generate",
            "--config",
            sys_cfg.to_str().unwrap(),
            "--n",
            "700",
            "--seed",
            "3",
            "--out",
            traj.to_str().unwrap(),
        ]),
        0,
    );

    let train_cfg = configs_dir().join("train_spo.json");
    let r = run(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--traj",
        traj.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "train.max_epochs=50",
    ]);
    assert_status(&r, 0);
    let model_path = dir.path().join("model.json");
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model_path).unwrap()).unwrap();
    assert_eq!(model["lag"], 2);
    assert_eq!(model["dim"], 2);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("train_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["config"]["train"]["max_epochs"], 50);
    assert_eq!(report["epochs"], 50);

    let eval_cfg = configs_dir().join("eval.json");
    let r = run(&[
        "eval",
        "--config",
        eval_cfg.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--traj",
        traj.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "q=400",
        "--set",
        "p=200",
    ]);
    assert_status(&r, 0);
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap())
            .unwrap();
    let regret = eval["normalized_regret"].as_f64().unwrap();
    assert!(regret.is_finite() && regret >= 0.0);
    assert_eq!(eval["config"]["q"], 400);
}

#[test]
fn experiment_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("fig2_desk.json");
    let args = |out: &Path| {
        vec![
            "experiment".to_string(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--trials".into(),
            "3".into(),
            "--set".into(),
            "q=150".into(),
            "--set".into(),
            "p=50".into(),
            "--set".into(),
            "losses.0.max_epochs=20".into(),
            "--set".into(),
            "losses.1.max_epochs=20".into(),
            "--set".into(),
            "losses.2.max_epochs=20".into(),
        ]
    };
    let out_a = dir.path().join("a");
    let r = bin().args(args(&out_a)).output().unwrap();
    assert_status(&r, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["trials"], 3);
    assert_eq!(report["records"].as_array().unwrap().len(), 9);
    let csv = std::fs::read_to_string(out_a.join("trials.csv")).unwrap();
    assert!(csv.starts_with("trial,loss,normalized_regret,rho,sigma_max,deg,a12\n"));
    assert_eq!(csv.lines().count(), 10);

    let out_b = dir.path().join("b");
    let r = bin().args(args(&out_b)).output().unwrap();
    assert_status(&r, 0);
    assert_eq!(
        std::fs::read(out_a.join("trials.csv")).unwrap(),
        std::fs::read(out_b.join("trials.csv")).unwrap()
    );
}

#[test]
fn sweep_a12_writes_points_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("fig3_desk.json");
    let r = run(&[
        "sweep-a12",
        "--config",
        cfg.to_str().unwrap(),
        "--values",
        "0,0.6",
        "--out",
        dir.path().to_str().unwrap(),
        "--trials",
        "2",
        "--set",
        "q=150",
        "--set",
        "p=50",
        "--set",
        "losses.0.max_epochs=15",
    ]);
    assert_status(&r, 0);
    assert!(dir.path().join("a12_0/report.json").exists());
    assert!(dir.path().join("a12_0.6/trials.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("sweep_summary.json")).unwrap(),
    )
    .unwrap();
    let points = summary.as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[0]["rho"], 0.8);
    assert_eq!(points[1]["a12"], 0.6);
    assert!(points[1]["median_regret"]["spo_plus"].is_number());
}

#[test]
fn bounds_example_and_infeasible_exit_codes() {
    let cfg = configs_dir().join("bounds_example.json");
    let r = run(&["bounds", "--inputs", cfg.to_str().unwrap()]);
    assert_status(&r, 0);
    let out: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let bound = out["generalization"]["bound"].as_f64().unwrap();
    assert!((bound - 0.64477).abs() < 1e-5);
    assert!((out["excess_risk"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(out["calibration_strongly_convex"].as_f64().unwrap(), 0.25);

    // delta' <= 0 is a runtime refusal: exit 2 with a clear message
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"generalization":{"empirical_risk":0.3,"rademacher":0.05,"omega":2.0,
            "m":100,"delta":0.1,"beta":{"value":0.01},"variant":"expected"}}"#,
    )
    .unwrap();
    let r = run(&["bounds", "--inputs", bad.to_str().unwrap()]);
    assert_status(&r, 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("infeasible confidence"));
}

#[test]
fn blocks_and_pacf_commands() {
    let r = run(&["blocks", "--n", "9", "--a", "2", "--m", "2", "--l", "1"]);
    assert_status(&r, 0);
    let split: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(split["y0"][0]["start"], 1);
    assert_eq!(split["y0"][0]["end"], 3);

    let r = run(&["blocks", "--n", "10", "--a", "2", "--m", "2", "--l", "1"]);
    assert_status(&r, 2);

    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let sys_cfg = configs_dir().join("system_deg2.json");
    assert_status(
        &run(&[
            "generate",
            "--config",
            sys_cfg.to_str().unwrap(),
            "--n",
            "600",
            "--seed",
            "1",
            "--out",
            traj.to_str().unwrap(),
        ]),
        0,
    );
    let r = run(&["pacf", "--traj", traj.to_str().unwrap(), "--max-lag", "6"]);
    assert_status(&r, 0);
    let out: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(out["coefficients"].as_array().unwrap().len(), 2);
    assert_eq!(out["coefficients"][0].as_array().unwrap().len(), 6);
    assert!(out["selected_lag"].as_u64().unwrap() >= 1);
}
