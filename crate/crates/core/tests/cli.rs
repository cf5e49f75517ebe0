use std::path::Path;
use std::process::{Command, Output};

use nested_sfbm::io::read_ohlc_file;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nested-sfbm"))
        .args(args)
        .env("NESTED_SFBM_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn small_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/model_small.toml").display().to_string()
}

#[test]
fn theory_gh_matches_direct_evaluation() {
    let v: serde_json::Value = serde_json::from_slice(&ok(&["theory", "--gh", "0.25", "1.0"])).unwrap();
    // (2^{2.5} - 2) / (2H (1 - 4H^2)(2H + 2)) at H = 1/4
    let expected = (2f64.powf(2.5) - 2.0) / (0.5 * 0.75 * 2.5);
    let got = v["g"]["g_tilde_H"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn missing_config_is_a_config_error() {
    let out = cli(&["calibrate", "--config", "/nonexistent/pipeline.toml", "--panel", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn simulate_is_deterministic_and_calibrates() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["simulate", "--config", &small_config(), "--seed", "4", "--out", out.to_str().unwrap()]);
    }
    for f in ["panel.csv", "qv.csv", "truth.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let report = dir.path().join("report.json");
    ok(&["calibrate", "--panel", a.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["tickers"].as_array().unwrap().len(), 20);
    assert!(v["factor_fit"]["hurst"].as_f64().unwrap().is_finite());
}

#[test]
fn gk_command_matches_bars_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, ohlc, gk) = (dir.path().join("sim"), dir.path().join("ohlc"), dir.path().join("gk"));
    ok(&[
        "simulate", "--config", &small_config(), "--seed", "2",
        "--out", sim.to_str().unwrap(), "--ohlc", ohlc.to_str().unwrap(),
    ]);
    ok(&["gk", "--ohlc", ohlc.to_str().unwrap(), "--out", gk.to_str().unwrap()]);

    let bars = read_ohlc_file(ohlc.join("x_3.csv")).unwrap().bars;
    let mut rdr = csv::Reader::from_path(gk.join("x_3.csv")).unwrap();
    let mut n = 0;
    for row in rdr.records() {
        let row = row.unwrap();
        let bar = bars.iter().find(|b| b.date.to_string() == row[0]).unwrap();
        assert_eq!(row[1].parse::<f64>().unwrap().to_bits(), bar.garman_klass().to_bits(), "{}", &row[0]);
        n += 1;
    }
    assert!(n >= 1000);
}

#[test]
fn experiment_bundle_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\nid = \"idio_recovery\"\nseed = 3\n\n[overrides]\nn_periods = 512\nsubdivisions = 8\nn_stocks = 10\npanels = 1\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["experiment", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    }
    let summary = std::fs::read(a.join("summary.json")).unwrap();
    assert_eq!(summary, std::fs::read(b.join("summary.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&summary).unwrap();
    assert_eq!(v["experiment"], "idio_recovery");
}
