//! End-to-end runs of the `kedrl` binary: one config file drives
//! simulate -> fit -> evaluate -> recover with no manual intervention.

use std::path::{Path, PathBuf};
use std::process::Command;

use kedrl::config::ExperimentConfig;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_kedrl")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = ExperimentConfig::default();
    cfg.discount = 0.25;
    cfg.n_trajectories = 40;
    cfg.horizon = 3;
    cfg.grid.k_clusters = 8;
    cfg.optimizer.steps = 80;
    cfg.mc = kedrl::config::McConfig { n_trajectories: 300, horizon: 15, seed: 9 };
    cfg.eval_points_per_dim = 4;
    cfg.replicates = 1;
    cfg.sweep = kedrl::config::SweepConfig {
        nu: vec![6.5],
        length_scale: vec![2.0],
        sigma: vec![0.6],
        lambda_reg: vec![5e-4, 5e-3],
        lambda_fp: vec![100.0],
    };
    let path = dir.join("config.json");
    cfg.save(&path).unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).env("KEDRL_THREADS", "2").output().expect("binary runs")
}

fn assert_ok(out: &std::process::Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (code {:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_runs_from_one_config() {
    let dir = std::env::temp_dir().join(format!("kedrl_cli_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = tiny_config(&dir);
    let cfg_s = config.to_str().unwrap();
    let out_s = dir.to_str().unwrap();

    // simulate: deterministic under the seed, byte-identical files
    let out = run(&["simulate", "--config", cfg_s, "--out", out_s]);
    assert_ok(&out, "simulate");
    let csv1 = std::fs::read(dir.join("dataset.csv")).unwrap();
    let out = run(&["simulate", "--config", cfg_s, "--out", out_s]);
    assert_ok(&out, "simulate (rerun)");
    let csv2 = std::fs::read(dir.join("dataset.csv")).unwrap();
    assert_eq!(csv1, csv2, "simulate must be byte-identical under one seed");

    // fit: writes a loadable model; identical refit gives identical B
    let data_s = dir.join("dataset.csv");
    let out = run(&["fit", "--config", cfg_s, "--data", data_s.to_str().unwrap(), "--out", out_s]);
    assert_ok(&out, "fit");
    let model1 = std::fs::read(dir.join("model.json")).unwrap();
    assert!(dir.join("trace.csv").exists() && dir.join("grid.csv").exists());
    let out = run(&["fit", "--config", cfg_s, "--data", data_s.to_str().unwrap(), "--out", out_s]);
    assert_ok(&out, "fit (rerun)");
    let model2 = std::fs::read(dir.join("model.json")).unwrap();
    assert_eq!(model1, model2, "refit with identical inputs and seed must match");
    let model = kedrl::bellman::EmbeddingModel::load(&dir.join("model.json")).unwrap();
    assert!(model.n() > 0 && model.m() > 0);

    // evaluate: report round-trips through serde
    let out = run(&[
        "evaluate",
        "--config",
        cfg_s,
        "--model",
        dir.join("model.json").to_str().unwrap(),
        "--out",
        out_s,
    ]);
    assert_ok(&out, "evaluate");
    let report_text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let report: kedrl::evaluation::OPEReport = serde_json::from_str(&report_text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&report).unwrap(), report_text.trim_end());
    assert!(report.rmse_mean.is_finite());
    assert!(dir.join("plot_coord_0.csv").exists());
    assert!(dir.join("plot_coord_2.csv").exists());

    // recover: mass statistic and a cdf curve with raw + clipped series
    let out = run(&[
        "recover",
        "--config",
        cfg_s,
        "--model",
        dir.join("model.json").to_str().unwrap(),
        "--kind",
        "mass",
        "--out",
        out_s,
    ]);
    assert_ok(&out, "recover mass");
    let stat: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("statistic.json")).unwrap()).unwrap();
    assert!(stat["raw"].is_f64());
    let out = run(&[
        "recover",
        "--config",
        cfg_s,
        "--model",
        dir.join("model.json").to_str().unwrap(),
        "--kind",
        "cdf_curve",
        "--params",
        r#"{"coordinate": 1}"#,
        "--out",
        out_s,
    ]);
    assert_ok(&out, "recover cdf_curve");
    let stat: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("statistic.json")).unwrap()).unwrap();
    assert!(stat["raw"].as_array().unwrap().len() > 10);
    assert!(stat["clipped"].as_array().unwrap().len() > 10);

    // unsupported statistic: exit code 2 with the exclusion rationale
    let out = run(&[
        "recover",
        "--config",
        cfg_s,
        "--model",
        dir.join("model.json").to_str().unwrap(),
        "--kind",
        "raw_moment",
        "--out",
        out_s,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not representable"));

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_writes_sorted_leaderboard() {
    let dir = std::env::temp_dir().join(format!("kedrl_cli_sweep_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = tiny_config(&dir);
    let out = run(&["sweep", "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_ok(&out, "sweep");
    let text = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "header + two lambda_reg rows:\n{text}");
    // rows sorted by bellman risk
    let risk = |line: &str| -> f64 { line.split(',').nth(5).unwrap().parse().unwrap() };
    assert!(risk(lines[1]) <= risk(lines[2]));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn validation_errors_exit_2() {
    let dir = std::env::temp_dir().join(format!("kedrl_cli_bad_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    // unknown keys must be rejected
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"totally_unknown_key": 1}"#).unwrap();
    let out = run(&["simulate", "--config", bad.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "format errors from config parse map to 4");
    // structurally valid JSON but invalid values
    let mut cfg = ExperimentConfig::default();
    cfg.discount = 2.0;
    let path = dir.join("invalid.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = run(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    // missing file maps to io
    let out = run(&["simulate", "--config", "/nonexistent/cfg.json", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    std::fs::remove_dir_all(&dir).ok();
}
