use std::fs;
use std::path::{Path, PathBuf};

use wgf_core::cli::cli_run;
use wgf_core::report::Metrics;

const STAGES: [&str; 6] = ["stats", "interpolate", "prepare", "train", "evaluate", "plot"];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(stage: &str, cfg: &Path, out: &Path) -> i32 {
    cli_run([
        "wgf",
        stage,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

/// Copy of a fixture config with `extra` lines appended and the data paths
/// pointing back at the fixture directory.
fn config_with(tmp: &Path, base: &str, extra: &str) -> PathBuf {
    let mut text = String::new();
    for line in fs::read_to_string(fixture(base)).unwrap().lines() {
        let key = line.split('=').next().unwrap().trim();
        let skip = extra.lines().any(|e| e.split('=').next().unwrap().trim() == key);
        if skip {
            continue;
        }
        match key {
            "grid" | "targets" | "power" => {
                let v = line.split('=').nth(1).unwrap().trim();
                text.push_str(&format!("{key} = {}\n", fixture(v).display()));
            }
            _ => {
                text.push_str(line);
                text.push('\n');
            }
        }
    }
    text.push_str(extra);
    let path = tmp.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn run_all(cfg: &Path, out: &Path) {
    for stage in STAGES {
        assert_eq!(run(stage, cfg, out), 0, "stage {stage}");
    }
}

#[test]
fn linear_fixture_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run_all(&fixture("linear.cfg"), &out);

    // 8 steps × 6 farms
    let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count() - 1, 8 * 6);

    let m = Metrics::from_text(&fs::read_to_string(out.join("metrics.txt")).unwrap()).unwrap();
    assert!(m.rmse < 1e-3, "rmse {}", m.rmse);
    assert_eq!(m.n, 12);

    for name in [
        "field_stats_wind_speed.csv",
        "field_stats_pressure.csv",
        "field_hist_wind_speed.svg",
        "field_hist_pressure.svg",
        "interp_wind_speed.csv",
        "interp_pressure.csv",
        "snaps.csv",
        "split.csv",
        "scalers.txt",
        "model.ckpt",
        "train_report.csv",
        "predictions.csv",
        "scatter.svg",
        "scatter.csv",
        "error_hist.svg",
        "error_hist.csv",
        "series_overlay.svg",
        "series_overlay.csv",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let report = fs::read_to_string(out.join("train_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 1500);
}

#[test]
fn pressure_stats_are_in_kpa() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(run("stats", &fixture("linear.cfg"), &out), 0);
    let text = fs::read_to_string(out.join("field_stats_pressure.csv")).unwrap();
    let mean: f64 = text.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!((99.0..104.0).contains(&mean), "{mean}");
}

#[test]
fn read_only_stages_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run_all(&fixture("linear.cfg"), &out);
    let snapshot = |names: &[&str]| -> Vec<Vec<u8>> { names.iter().map(|n| fs::read(out.join(n)).unwrap()).collect() };
    let names = [
        "field_stats_wind_speed.csv",
        "field_hist_pressure.svg",
        "interp_wind_speed.csv",
        "metrics.txt",
        "predictions.csv",
        "scatter.svg",
        "error_hist.svg",
        "series_overlay.svg",
    ];
    let before = snapshot(&names);
    for stage in ["stats", "interpolate", "evaluate", "plot"] {
        assert_eq!(run(stage, &fixture("linear.cfg"), &out), 0);
    }
    assert!(before == snapshot(&names));
}

#[test]
fn sequence_models_run() {
    for cfg in ["lstm.cfg", "hybrid.cfg", "siren.cfg"] {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let c = config_with(tmp.path(), cfg, "epochs = 5\n");
        run_all(&c, &out);
        let m = Metrics::from_text(&fs::read_to_string(out.join("metrics.txt")).unwrap()).unwrap();
        assert!(m.rmse.is_finite());
    }
}

#[test]
fn windowed_test_set_follows_label_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let c = config_with(tmp.path(), "lstm.cfg", "epochs = 2\n");
    run_all(&c, &out);
    // chronological split keeps the last 2 of 8 steps per farm; with L = 3
    // every test label still has a full window behind it
    let preds = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count() - 1, 6 * 2);
}

#[test]
fn missing_config_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run("train", &tmp.path().join("missing.cfg"), tmp.path()), 2);
}

#[test]
fn usage_errors() {
    assert_eq!(cli_run(["wgf", "frobnicate", "--config", "x.cfg"]), 1);
    assert_eq!(cli_run(["wgf", "train"]), 1);
    assert_eq!(cli_run(["wgf"]), 1);
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let base = config_with(tmp.path(), "linear.cfg", "");
    assert_eq!(run("interpolate", &base, &out), 0);
    assert_eq!(run("prepare", &base, &out), 0);
    for (extra, stage) in [
        ("colour = blue\n", "interpolate"),
        ("split = sideways\n", "prepare"),
        ("test_frac = 1.5\n", "prepare"),
        ("architecture = perceptron\n", "train"),
        ("scheduler = cosine\n", "train"),
        ("lr = fast\n", "train"),
        ("batch_size = 0\n", "train"),
    ] {
        let c = config_with(tmp.path(), "linear.cfg", extra);
        assert_eq!(run(stage, &c, &out), 1, "{extra:?} at {stage}");
    }
    // a missing required key
    let c = tmp.path().join("noseed.cfg");
    let text: String = fs::read_to_string(config_with(tmp.path(), "linear.cfg", ""))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("seed"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&c, text).unwrap();
    assert_eq!(run("interpolate", &c, &out), 0);
    assert_eq!(run("prepare", &c, &out), 1);
}

#[test]
fn missing_inputs_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let c = config_with(tmp.path(), "linear.cfg", "");
    assert_eq!(run("evaluate", &c, &out), 2);
    assert_eq!(run("plot", &c, &out), 2);
    let bad = config_with(tmp.path(), "linear.cfg", "grid = /nonexistent/grid.cgrd\n");
    assert_eq!(run("interpolate", &bad, &out), 2);
}
