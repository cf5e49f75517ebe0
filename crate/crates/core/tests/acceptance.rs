//! Acceptance criteria 1-10, each at its stated tolerance.
//!
//! Every test prints one `criterion N: PASS|FAIL` line with the measured
//! quantities before asserting, so a run shows the full picture even when some
//! criteria fail.

mod common;

use std::time::{Duration, Instant};

use chrono::NaiveDate;
use proptest::test_runner::{Config, TestRng, TestRunner};

use common::props::*;
use common::{c_upsilon_quad, g_quad, g_tilde_quad, mean, median, pearson, sd};
use nested_sfbm::experiments::{run_experiment, ExperimentId, ExperimentSpec};
use nested_sfbm::gmm::{fit_hurst, GmmConfig};
use nested_sfbm::io::export_ohlc_dir;
use nested_sfbm::pipeline::{factor_qv_proxy, run_calibration, PipelineConfig};
use nested_sfbm::sampler::{stream_rng, CirculantSampler, GridSpec};
use nested_sfbm::sim::{simulate_summary, ModelConfig, NestedSimulator};
use nested_sfbm::theory::{c_upsilon_h, error_ratio_constants_h0, g_h, g_tilde_h, small_intermittency_v, SfbmParams};

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n}: {} ({name}) {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn desk_model() -> ModelConfig {
    ModelConfig::from_toml(include_str!("../configs/model_desk.toml")).unwrap()
}

#[test]
fn criterion_01_closed_forms_match_quadrature() {
    let start = Instant::now();
    let hs: Vec<f64> = (0..10).map(|k| 0.02 + 0.048 * k as f64).collect();
    let zs: Vec<f64> = (0..10).map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 9.0)).collect();
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let (mut worst_g, mut worst_gt, mut worst_c) = (0.0f64, 0.0f64, 0.0f64);
    for &h in &hs {
        for &z in &zs {
            worst_g = worst_g.max(rel(g_h(h, z), g_quad(h, z)));
            worst_gt = worst_gt.max(rel(g_tilde_h(h, z), g_tilde_quad(h, z)));
            let tau = 1.0 / z;
            worst_c = worst_c.max(rel(c_upsilon_h(h, 1000.0, 1.0, tau), c_upsilon_quad(h, 1000.0, 1.0, tau)));
        }
    }
    let elapsed = start.elapsed();
    let worst = worst_g.max(worst_gt).max(worst_c);
    verdict(
        1,
        "theory oracle agreement",
        worst <= 1e-6 && elapsed < Duration::from_secs(30),
        format!("max rel err g {worst_g:.2e}, g~ {worst_gt:.2e}, C {worst_c:.2e}; {elapsed:.1?}"),
    );
}

#[test]
fn criterion_02_error_ratio_constants() {
    let k = error_ratio_constants_h0(0.05, 5000.0, 1.0).unwrap();
    let c0 = 1.0 / 6.0 + 2.0 * std::f64::consts::PI.powi(2) / 9.0;
    let v2 = 5000f64.ln() + 1.5;
    let r0 = 0.05 * c0 / (4.0 * v2);
    // six significant digits
    let ok = |a: f64, b: f64| ((a - b) / b).abs() < 5e-7;
    let pass = ok(k.c0, c0) && ok(k.v2, v2) && ok(k.ratio, r0) && (k.ratio - 0.003).abs() < 5e-4;
    verdict(
        2,
        "H -> 0 constants",
        pass,
        format!("C(0) {:.7} vs {c0:.7}, V2 {:.7} vs {v2:.7}, R(0) {:.7} vs {r0:.7}", k.c0, k.v2, k.ratio),
    );
}

#[test]
fn criterion_03_sampler_law() {
    let start = Instant::now();
    let n = 4096;
    let mode = SfbmParams::new(0.11, 0.0025, 4096.0).unwrap();
    let sampler = CirculantSampler::new(&mode, &GridSpec::new(n, 1.0).unwrap()).unwrap();
    let lags = [1usize, 8, 64, 512];
    let mut acov: Vec<Vec<f64>> = vec![Vec::new(); lags.len()];
    let mut exp_mean = Vec::new();
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    for k in 0..100 {
        sampler.sample_centered_pair_into(&mut stream_rng(3, k), &mut a, &mut b);
        for x in [&a, &b] {
            for (j, &l) in lags.iter().enumerate() {
                acov[j].push(x[l..].iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() / (n - l) as f64);
            }
            exp_mean.push(x.iter().map(|v| (v + mode.mean()).exp()).sum::<f64>() / n as f64);
        }
    }
    let elapsed = start.elapsed();
    let z = |x: &[f64], target: f64| (mean(x) - target) / (sd(x) / (x.len() as f64).sqrt());
    let zs: Vec<f64> = lags.iter().zip(&acov).map(|(&l, c)| z(c, mode.covariance(l as f64))).collect();
    let z_exp = z(&exp_mean, 1.0);
    let pass = zs.iter().all(|v| v.abs() <= 3.0) && z_exp.abs() <= 3.0 && elapsed < Duration::from_secs(120);
    verdict(
        3,
        "sampler law",
        pass,
        format!("z-scores at lags {lags:?}: {zs:.2?}; E[e^w] z {z_exp:.2}; {elapsed:.1?}"),
    );
}

#[test]
fn criterion_04_two_mode_variance() {
    let start = Instant::now();
    let (m, horizon, paths) = (1024usize, 256.0, 8000usize);
    let modes = [
        SfbmParams::new(0.11, 0.0025, horizon).unwrap(),
        SfbmParams::new(0.01, 0.0025, horizon).unwrap(),
    ];
    let taus = [4usize, 16, 64];
    let n = 65 * m + 1;
    let grid = GridSpec::new(n, 1.0 / m as f64).unwrap();
    let samplers: Vec<CirculantSampler> = modes.iter().map(|p| CirculantSampler::new(p, &grid).unwrap()).collect();
    let dt = 1.0 / m as f64;
    // window measures M^l(t0) of both modes, for t0 in {0} + taus
    let starts: Vec<usize> = std::iter::once(0).chain(taus.iter().copied()).collect();
    let mut window = vec![vec![[0.0f64; 4]; paths]; 2];
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    for (l, (sampler, p)) in samplers.iter().zip(&modes).enumerate() {
        for k in 0..paths / 2 {
            sampler.sample_centered_pair_into(&mut stream_rng(40 + l as u64, k as u64), &mut a, &mut b);
            for (j, x) in [&a, &b].into_iter().enumerate() {
                for (w, &t0) in starts.iter().enumerate() {
                    let s = t0 * m;
                    window[l][2 * k + j][w] = x[s..s + m].iter().map(|v| (v + p.mean()).exp()).sum::<f64>() * dt;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let mut errs = Vec::new();
    for (w, &tau) in taus.iter().enumerate() {
        let d: Vec<f64> = (0..paths)
            .map(|k| (window[0][k][w + 1] + window[1][k][w + 1]).ln() - (window[0][k][0] + window[1][k][0]).ln())
            .collect();
        let var = sd(&d).powi(2);
        let target = small_intermittency_v(&[(1.0, modes[0]), (1.0, modes[1])], tau as f64, 1.0).unwrap();
        errs.push((var - target) / target);
    }
    let pass = errs.iter().all(|e| e.abs() <= 0.05) && elapsed < Duration::from_secs(600);
    verdict(
        4,
        "two-mode small-intermittency variance",
        pass,
        format!("relative errors at tau {taus:?}: {errs:.4?} over {paths} paths; {elapsed:.1?}"),
    );
}

#[test]
fn criterion_05_gmm_recovery() {
    let (l, s) = (1usize << 15, 16usize);
    let mode = SfbmParams::new(0.11, 0.0025, l as f64).unwrap();
    let n = l * s;
    let sampler = CirculantSampler::new(&mode, &GridSpec::new(n + 1, 1.0 / s as f64).unwrap()).unwrap();
    let (mut a, mut b) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let cfg = GmmConfig::default();
    let log_measure = |x: &[f64]| -> Vec<f64> {
        x[..n]
            .chunks_exact(s)
            .map(|c| (c.iter().map(|w| (w + mode.mean()).exp()).sum::<f64>() / s as f64).ln())
            .collect()
    };
    let mut means = Vec::new();
    let mut covered = 0;
    for meta in 0..20u64 {
        let mut h = Vec::new();
        for k in 0..10 {
            sampler.sample_centered_pair_into(&mut stream_rng(500 + meta, k), &mut a, &mut b);
            for x in [&a, &b] {
                h.push(fit_hurst(&log_measure(x), &cfg, 1.0).unwrap().hurst);
            }
        }
        let (m, half) = (mean(&h), 1.96 * sd(&h) / (h.len() as f64).sqrt());
        if (m - half..=m + half).contains(&0.11) {
            covered += 1;
        }
        means.push(m);
    }
    let worst = means.iter().map(|m| (m - 0.11).abs()).fold(0.0, f64::max);
    verdict(
        5,
        "GMM recovery",
        worst <= 0.03 && covered >= 18,
        format!("max |mean H - 0.11| {worst:.4} over 20 meta-repetitions; CI covers truth in {covered}/20"),
    );
}

#[test]
fn criterion_06_pipeline_recovery() {
    let start = Instant::now();
    let cfg = desk_model();
    let spec = cfg.build(0).unwrap();
    let sim = NestedSimulator::new(&spec, 0).unwrap();
    let report = run_calibration(&sim, &PipelineConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let idio = median(&report.idio_fits.iter().map(|f| f.hurst).collect::<Vec<_>>());
    let factor = report.factor_hurst();
    let corr = pearson(&report.beta_hat, spec.betas());
    let gamma = mean(&report.gamma_hat);
    let pass = idio <= 0.04
        && (0.08..=0.14).contains(&factor)
        && corr >= 0.99
        && (gamma - 0.2).abs() <= 0.05
        && elapsed < Duration::from_secs(1200);
    verdict(
        6,
        "pipeline recovery",
        pass,
        format!(
            "median H_i {idio:.4}, factor H {factor:.4} (single fit {:.4}), beta corr {corr:.5}, mean gamma {gamma:.4}; {elapsed:.1?}",
            report.factor_fit.hurst
        ),
    );
}

#[test]
fn criterion_07_convergence_in_n() {
    let spec = ExperimentSpec::new(ExperimentId::ConvergenceInN, 0)
        .with_override("hurst_values", toml::Value::Array(vec![0.11.into()]))
        .with_override("factor_fit", false);
    let bundle = run_experiment(&spec).unwrap();
    let reps = bundle.summary["results"]["0.11"]["replications"].as_array().unwrap().clone();
    let h: Vec<Vec<f64>> = reps
        .iter()
        .map(|r| r["index_hurst"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
        .collect();
    let se_128: Vec<f64> = reps.iter().map(|r| r["index_se"][2].as_f64().unwrap()).collect();
    let monotone = h.iter().filter(|v| v.windows(2).all(|w| w[0] <= w[1])).count();
    let h_128: Vec<f64> = h.iter().map(|v| v[2]).collect();
    let m = mean(&h_128);
    // jackknife CI of the replication mean
    let half = 1.96 * (mean(&se_128.iter().map(|s| s * s).collect::<Vec<_>>()) / h_128.len() as f64).sqrt();
    let pass = monotone >= 17 && (m - half..=m + half).contains(&0.11);
    verdict(
        7,
        "convergence in N",
        pass,
        format!(
            "monotone in {monotone}/{}; H_index(128) mean {m:.4} +- {half:.4}; per-N means {:.4?}",
            h.len(),
            (0..3).map(|j| mean(&h.iter().map(|v| v[j]).collect::<Vec<_>>())).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_08_factor_proxy() {
    let mut cfg = desk_model();
    cfg.n_stocks = 200;
    let spec = cfg.build(0).unwrap();
    let summary = simulate_summary(&spec, 0, &[]).unwrap();
    let truth = &summary.truth.factor_qv;
    let ns = [25usize, 50, 100, 200];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let proxy = factor_qv_proxy(&summary.stock_qv[..n], &spec.betas()[..n], 1.0).unwrap();
            median(&proxy.values().iter().zip(truth).map(|(p, f)| (p / f - 1.0).abs()).collect::<Vec<_>>())
        })
        .collect();
    let pass = errs[3] <= 0.05 && errs.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        8,
        "factor QV proxy",
        pass,
        format!("median |proxy/truth - 1| at N {ns:?}: {errs:.4?}"),
    );
}

#[test]
fn criterion_09_property_suites() {
    let runner = |cases| TestRunner::new_with_rng(Config::with_cases(cases), TestRng::deterministic_rng(Default::default()));
    let gk = runner(512).run(&(bar_strategy(), -30i32..30), |(b, k)| gk_scale_invariant(b, k));
    let ranks = runner(256).run(&tied_series(), gaussianize_preserves_ranks);
    let beta = runner(256).run(&rank_one_strategy(), |(b, d)| beta_recovers_rank_one(b, d));
    let shift = runner(32).run(&dyadic_series_and_shift(), |(y, c)| fit_is_shift_invariant(y, c));

    use rand::Rng;
    let mut rng = stream_rng(9, 0);
    let y: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>().powi(5) * 1e3).collect();
    let ks = ks_to_normal(nested_sfbm::vol::gaussianize(&y).unwrap().values());

    let results = [
        ("GK scale invariance", gk.is_ok()),
        ("gaussianize ranks", ranks.is_ok()),
        ("beta rank-one recovery", beta.is_ok()),
        ("fit_hurst shift invariance", shift.is_ok()),
        ("gaussianize KS at n=1e4", ks <= KS_BOUND_1E4),
    ];
    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    verdict(
        9,
        "property suites",
        failed.is_empty(),
        format!("KS {ks:.2e}; failing: {failed:?}"),
    );
}

#[test]
fn criterion_10_calibrate_on_ohlc_directory() {
    let mut cfg = desk_model();
    cfg.n_stocks = 50;
    cfg.n_periods = 1100;
    cfg.subdivisions = 16;
    let spec = cfg.build(10).unwrap();
    let panel = NestedSimulator::new(&spec, 10).unwrap().panel().unwrap().panel;
    let dir = tempfile::tempdir().unwrap();
    let ohlc = dir.path().join("ohlc");
    let start = NaiveDate::from_ymd_opt(2015, 1, 5).unwrap();
    export_ohlc_dir(&ohlc, &panel.tickers, &panel.fine_returns, 16, start).unwrap();

    let out = dir.path().join("report.json");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_nested-sfbm"))
        .args(["calibrate", "--ohlc"])
        .arg(&ohlc)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    let report: serde_json::Value = if status.success() {
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap()
    } else {
        serde_json::Value::Null
    };
    let len = |k: &str| report[k].as_array().map_or(0, |a| a.len());
    let finite = |k: &str| {
        report[k]
            .as_array()
            .is_some_and(|a| a.iter().all(|v| v.as_f64().is_some_and(f64::is_finite)))
    };
    let checks = [
        ("exit status", status.success()),
        ("50 tickers", len("tickers") == 50),
        (">= 1000 days", report["n_periods"].as_u64().unwrap_or(0) >= 1000),
        ("betas", len("beta_hat") == 50 && finite("beta_hat")),
        ("sigmas", len("sigma_hat") == 50 && finite("sigma_hat")),
        ("gammas", len("gamma_hat") == 50 && finite("gamma_hat")),
        ("factor fit", report["factor_fit"]["hurst"].as_f64().is_some_and(f64::is_finite)),
        ("factor lag sets", report["factor_lagsets"]["mean"].as_f64().is_some()),
        ("idiosyncratic fits", len("idio_fits") == 50),
        ("regime", report["regime"].is_object()),
        ("diagnostics", report["diagnostics"]["factor_source"].is_string()),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        10,
        "calibrate on an OHLC directory",
        failed.is_empty(),
        format!(
            "factor source {}, factor H {}; missing: {failed:?}",
            report["diagnostics"]["factor_source"], report["factor_fit"]["hurst"]
        ),
    );
}
