//! Size of the second-order correction to the small-intermittency approximation.
//!
//! With $z_u = (\omega_u-\mu)/\lambda$, $\Upsilon_\Delta(t) = \int_t^{t+\Delta} z_u\,du$ and
//! $\Theta_\Delta(t) = \int_t^{t+\Delta} z_u^2\,du - \Upsilon_\Delta(t)^2/\Delta$,
//!
//! $$ R(\tau) = \frac{\lambda^2\,\operatorname{Cov}(\Theta_\Delta(0),\Theta_\Delta(\tau))}{4\operatorname{Cov}(\Upsilon_\Delta(0),\Upsilon_\Delta(\tau))}. $$
//!
//! For $H=0$, $\tau=0$ the numerator is $C(0) = (1/6 + 2\pi^2/9)\Delta^2$ and the
//! denominator is $4\Delta V_2$ with $V_2 = \Delta(\ln(T/\Delta)+3/2)$. Other cases
//! are estimated by Monte Carlo.

use serde::{Deserialize, Serialize};

use super::{c_upsilon_h, H_MAX, H_MIN};
use crate::error::{ensure, Error, Result};
use crate::sampler::{stream_rng, CirculantSampler, GridSpec};

/// Closed-form quantities of the $H=0$, $\tau=0$ case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRatioConstants {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    /// $C(0) = V_1 + 2V_2^2 - 2V_3$.
    pub c0: f64,
    /// $\lambda^2 C(0) / (4\Delta V_2)$.
    pub ratio: f64,
}

pub fn error_ratio_constants_h0(lambda_sq: f64, horizon: f64, delta: f64) -> Result<ErrorRatioConstants> {
    ensure(delta > 0.0 && horizon > delta, || "need 0 < delta < horizon".into())?;
    let d2 = delta * delta;
    let l = (horizon / delta).ln();
    let v1 = d2 * (2.0 * l * l + 6.0 * l + 7.0);
    let v2 = delta * (l + 1.5);
    let v3 = d2 * (2.0 * l * l + 6.0 * l + 17.0 / 3.0 - std::f64::consts::PI.powi(2) / 9.0);
    // the L-dependence cancels exactly, so use the reduced form
    let c0 = d2 * (1.0 / 6.0 + 2.0 * std::f64::consts::PI.powi(2) / 9.0);
    Ok(ErrorRatioConstants {
        v1,
        v2,
        v3,
        c0,
        ratio: lambda_sq * c0 / (4.0 * delta * v2),
    })
}

/// Simulation budget for the Monte-Carlo branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloBudget {
    pub paths: usize,
    pub periods_per_path: usize,
    pub substeps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRatioEstimate {
    pub value: f64,
    /// Zero for the exact branch.
    pub std_error: f64,
    pub exact: bool,
}

/// $R(\tau)$: exact for `hurst == 0 && tau == 0`, Monte Carlo otherwise.
pub fn small_intermittency_error_ratio(
    hurst: f64,
    lambda_sq: f64,
    horizon: f64,
    delta: f64,
    tau: usize,
    budget: Option<MonteCarloBudget>,
) -> Result<ErrorRatioEstimate> {
    if hurst == 0.0 && tau == 0 {
        let c = error_ratio_constants_h0(lambda_sq, horizon, delta)?;
        return Ok(ErrorRatioEstimate {
            value: c.ratio,
            std_error: 0.0,
            exact: true,
        });
    }
    let budget = budget.ok_or_else(|| {
        Error::InvalidParameter("the Monte-Carlo branch needs a budget and seed".into())
    })?;
    ensure((H_MIN..=H_MAX).contains(&hurst), || {
        format!("Monte-Carlo branch needs hurst in [{H_MIN}, {H_MAX}], got {hurst}")
    })?;
    ensure(budget.paths >= 2 && budget.substeps >= 2, || "budget too small".into())?;
    ensure(budget.periods_per_path > tau + 1, || "path shorter than the lag".into())?;
    let span = budget.periods_per_path as f64 * delta;
    ensure(span <= horizon, || "path span exceeds the horizon".into())?;

    let m = budget.substeps;
    let dt = delta / m as f64;
    let n_points = budget.periods_per_path * m;
    // z has covariance (sfbm_cov)/lambda^2, i.e. nu^2 = 1/(H(1-2H))
    let unit = crate::theory::SfbmParams::new(hurst, 1.0, horizon)?;
    let sampler = CirculantSampler::new(&unit, &GridSpec::new(n_points, dt)?)?;

    let mut per_path = Vec::with_capacity(budget.paths);
    let mut thetas: Vec<Vec<f64>> = Vec::with_capacity(budget.paths);
    let mut path = vec![0.0; n_points];
    for p in 0..budget.paths {
        let mut rng = stream_rng(budget.seed, p as u64);
        sampler.sample_centered_into(&mut rng, &mut path);
        let theta: Vec<f64> = path
            .chunks_exact(m)
            .map(|w| {
                let s1: f64 = w.iter().sum::<f64>() * dt;
                let s2: f64 = w.iter().map(|x| x * x).sum::<f64>() * dt;
                s2 - s1 * s1 / delta
            })
            .collect();
        thetas.push(theta);
    }
    let count: usize = thetas.iter().map(Vec::len).sum();
    let mean = thetas.iter().flatten().sum::<f64>() / count as f64;
    for theta in &thetas {
        let k = theta.len() - tau;
        let c: f64 = (0..k).map(|t| (theta[t] - mean) * (theta[t + tau] - mean)).sum::<f64>() / k as f64;
        per_path.push(c);
    }
    let n = per_path.len() as f64;
    let c_mean = per_path.iter().sum::<f64>() / n;
    let c_var = per_path.iter().map(|c| (c - c_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let denom = 4.0 * delta * delta * c_upsilon_h(hurst, horizon, delta, tau as f64 * delta);
    Ok(ErrorRatioEstimate {
        value: lambda_sq * c_mean / denom,
        std_error: lambda_sq * (c_var / n).sqrt() / denom.abs(),
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_at_reference_point() {
        let c = error_ratio_constants_h0(0.05, 5000.0, 1.0).unwrap();
        let c0 = 1.0 / 6.0 + 2.0 * std::f64::consts::PI.powi(2) / 9.0;
        assert!((c.c0 - c0).abs() < 1e-15);
        assert!((c.v1 + 2.0 * c.v2 * c.v2 - 2.0 * c.v3 - c.c0).abs() < 1e-10);
        assert!((c.v2 - (5000f64.ln() + 1.5)).abs() < 1e-14);
        assert!((c.ratio - 0.05 * c0 / (4.0 * (5000f64.ln() + 1.5))).abs() < 1e-16);
    }

    #[test]
    fn monte_carlo_branch_needs_budget() {
        assert!(small_intermittency_error_ratio(0.1, 0.05, 5000.0, 1.0, 0, None).is_err());
        let exact = small_intermittency_error_ratio(0.0, 0.05, 5000.0, 1.0, 0, None).unwrap();
        assert!(exact.exact);
    }

    #[test]
    fn monte_carlo_is_below_the_h0_worst_case() {
        let budget = MonteCarloBudget { paths: 40, periods_per_path: 256, substeps: 64, seed: 3 };
        let worst = error_ratio_constants_h0(0.05, 5000.0, 1.0).unwrap().ratio;
        let r0 = small_intermittency_error_ratio(0.05, 0.05, 5000.0, 1.0, 0, Some(budget)).unwrap();
        assert!(r0.value > 0.0 && r0.value < worst * 1.1, "{r0:?} vs {worst}");
        let r4 = small_intermittency_error_ratio(0.05, 0.05, 5000.0, 1.0, 4, Some(budget)).unwrap();
        assert!(r4.value.abs() < 0.1 * r0.value, "{r4:?}");
    }
}
