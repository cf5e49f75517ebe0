use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::theory::H_MIN;

pub const DEFAULT_Q_LIST: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
/// Estimates below this are reported as showing no scaling.
const NO_SCALING_H: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentScalingFit {
    /// Clamped to `[H_MIN, 1)`.
    pub hurst: f64,
    /// Unclamped average of `slope(q)/q`.
    pub raw: f64,
    /// `(q, slope)` per moment order.
    pub slopes: Vec<(f64, f64)>,
    pub lags: Vec<usize>,
    /// Set when the raw estimate is below 0.01.
    pub no_scaling: bool,
}

/// Powers of two up to `n/8`.
pub fn default_scaling_lags(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |l| Some(l * 2))
        .take_while(|&l| l <= n / 8)
        .collect()
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Hurst exponent of a series from the scaling of its increment moments
/// $m(q,\tau) = \langle|y_{t+\tau}-y_t|^q\rangle \propto \tau^{qH}$:
/// $\hat H$ is the average over `q` of the log-log slope divided by `q`.
///
/// Empty `q_list` or `lags` select the defaults.
pub fn hurst_by_moment_scaling(series: &[f64], q_list: &[f64], lags: &[usize]) -> Result<MomentScalingFit> {
    let q_list = if q_list.is_empty() { &DEFAULT_Q_LIST[..] } else { q_list };
    let lags = if lags.is_empty() {
        default_scaling_lags(series.len())
    } else {
        lags.to_vec()
    };
    ensure(q_list.iter().all(|&q| q > 0.0), || "moment orders must be positive".into())?;
    if lags.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "moment scaling needs at least 3 lags, got {}",
            lags.len()
        )));
    }
    ensure(lags.iter().all(|&l| l >= 1 && l < series.len()), || {
        "lags must lie in 1..len".into()
    })?;
    let log_lag: Vec<f64> = lags.iter().map(|&l| (l as f64).ln()).collect();
    let mut slopes = Vec::with_capacity(q_list.len());
    for &q in q_list {
        let mut log_m = Vec::with_capacity(lags.len());
        for &l in &lags {
            let incs = &series[l..];
            let m = incs
                .iter()
                .zip(series)
                .map(|(a, b)| (a - b).abs().powf(q))
                .sum::<f64>()
                / incs.len() as f64;
            if m <= 0.0 {
                return Err(Error::Degenerate(format!("zero increments at lag {l}")));
            }
            log_m.push(m.ln());
        }
        slopes.push((q, ols_slope(&log_lag, &log_m)));
    }
    let raw = slopes.iter().map(|(q, s)| s / q).sum::<f64>() / slopes.len() as f64;
    Ok(MomentScalingFit {
        hurst: raw.clamp(H_MIN, 1.0),
        raw,
        slopes,
        lags,
        no_scaling: raw < NO_SCALING_H,
    })
}
