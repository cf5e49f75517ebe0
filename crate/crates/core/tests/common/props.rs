//! Property checks shared by the proptest suite and the acceptance run.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use nested_sfbm::gmm::{fit_hurst, GmmConfig};
use nested_sfbm::pipeline::{estimate_beta_from_cov, BetaConfig};
use nested_sfbm::vol::{gaussianize, OhlcBar};

pub fn bar_strategy() -> impl Strategy<Value = OhlcBar> {
    (1e-3f64..1e4, -0.2f64..0.2, 0.0f64..0.2, 0.0f64..0.2).prop_map(|(o, r, up, down)| {
        let c = o * r.exp();
        OhlcBar {
            date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            open: o,
            high: o.max(c) * up.exp(),
            low: o.min(c) * (-down).exp(),
            close: c,
        }
    })
}

/// Scaling every price by `2^k` leaves the Garman-Klass variance bit-identical.
pub fn gk_scale_invariant(bar: OhlcBar, k: i32) -> Result<(), TestCaseError> {
    let s = 2f64.powi(k);
    let scaled = OhlcBar {
        open: bar.open * s,
        high: bar.high * s,
        low: bar.low * s,
        close: bar.close * s,
        ..bar
    };
    prop_assert_eq!(bar.garman_klass().to_bits(), scaled.garman_klass().to_bits());
    Ok(())
}

/// Ties are likely: values come from a small integer range.
pub fn tied_series() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50i32..50, 30..300).prop_map(|v| v.into_iter().map(|x| x as f64 * 0.37).collect())
}

/// Strict order and ties of the input carry over to the output.
pub fn gaussianize_preserves_ranks(y: Vec<f64>) -> Result<(), TestCaseError> {
    if y.iter().all(|v| *v == y[0]) {
        return Ok(());
    }
    let g = gaussianize(&y).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let x = g.values();
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] < y[j] {
                prop_assert!(x[i] < x[j]);
            } else if y[i] == y[j] {
                prop_assert_eq!(x[i].to_bits(), x[j].to_bits());
            }
        }
    }
    Ok(())
}

/// Kolmogorov distance between the empirical law of `x` and N(0, 1).
pub fn ks_to_normal(x: &[f64]) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, xi)| {
            let f = normal.cdf(*xi);
            f64::max((i as f64 + 1.0) / n - f, f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Distinct ranks of `n` values map onto normal quantiles at `i/(n+1)`, whose
/// Kolmogorov distance to N(0, 1) is at most `1/(n+1)` before standardization.
pub const KS_BOUND_1E4: f64 = 5e-4;

pub fn rank_one_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05f64..3.0, n),
            prop::collection::vec(0.0f64..2.0, n),
        )
    })
}

/// `C = beta beta^T + diag(d)` gives back `beta` to 1e-8.
pub fn beta_recovers_rank_one(beta: Vec<f64>, d: Vec<f64>) -> Result<(), TestCaseError> {
    let n = beta.len();
    let c = DMatrix::from_fn(n, n, |i, j| beta[i] * beta[j] + if i == j { d[i] } else { 0.0 });
    let est = estimate_beta_from_cov(&c, &BetaConfig::default()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for (a, b) in est.beta.iter().zip(&beta) {
        prop_assert!((a - b).abs() <= 1e-8, "beta {} vs {}", a, b);
    }
    for (r, di) in est.residual_var.iter().zip(&d) {
        prop_assert!((r - di).abs() <= 1e-8, "residual {} vs {}", r, di);
    }
    Ok(())
}

/// Series on the grid `2^-10` with dyadic shifts, so that differences between
/// values are exact in floating point for the series and its shifted copy.
pub fn dyadic_series_and_shift() -> impl Strategy<Value = (Vec<f64>, f64)> {
    (prop_oneof![Just(256usize), Just(512usize)], -(1i64 << 20)..(1i64 << 20)).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(-(1i32 << 11)..(1i32 << 11), n)
                .prop_map(|v| v.into_iter().map(|x| x as f64 / 1024.0).collect::<Vec<f64>>()),
            Just(k as f64 / 1024.0),
        )
    })
}

/// Adding a constant to the series leaves the fit unchanged.
pub fn fit_is_shift_invariant(y: Vec<f64>, c: f64) -> Result<(), TestCaseError> {
    let cfg = GmmConfig::default();
    let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
    let a = fit_hurst(&y, &cfg, 1.0);
    let b = fit_hurst(&shifted, &cfg, 1.0);
    prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    Ok(())
}
