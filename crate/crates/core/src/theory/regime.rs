//! Conditions under which single stocks inherit the idiosyncratic roughness and
//! (sub-)indices inherit the factor roughness.
//!
//! Three simplified criteria are reported together with the general inequalities
//! they come from, evaluated at a given `(tau, delta)`:
//!
//! * residual mode: $\gamma_i^2 \ll (\lambda_i^2/\lambda^2)(\tau/T)^{2H_i-2H} r_{H_i,H}(\Delta/\tau)$,
//!   simplified to $\gamma_i \le 1$;
//! * stock vs factor: $\beta_i^4 \ll (\sigma_i^4\lambda_i^2/\lambda^2)(\tau/T)^{2H_i-2H} r_{H_i,H}(\Delta/\tau)$,
//!   simplified to $|\beta_i| \le \sigma_i$;
//! * sub-index: $\bar\beta^4 \gg \sum_i w_i^4\sigma_i^4(\lambda_i^2/\lambda^2)(\tau/T)^{2(H_i-H)} r_{H_i,H}(\Delta/\tau)$,
//!   simplified (with $\lambda_i\simeq\lambda$, $H_i\to0$) to $\bar\beta^{4/3}N_s \gg 10$.
//!
//! `a ≪ b` means `b ≥ 10 a`.

use serde::{Deserialize, Serialize};

use super::{kernels::r_ratio, SfbmParams};
use crate::error::{ensure, Result};
use crate::sim::NestedModelSpec;

/// Factor by which one side must exceed the other for `≪`.
pub const MUCH_LESS_FACTOR: f64 = 10.0;
/// Right-hand side of the simplified sub-index condition.
pub const SUBINDEX_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// $1/\gamma_i$; the simplified residual criterion holds when $\ge 1$.
    pub gamma_margin: Vec<f64>,
    /// $\sigma_i/|\beta_i|$; the simplified stock criterion holds when $\ge 1$.
    pub beta_upper_margin: Vec<f64>,
    /// Right side over left side of the general residual inequality.
    pub gamma_margin_general: Vec<f64>,
    /// Right side over left side of the general stock inequality.
    pub beta_margin_general: Vec<f64>,
    /// $\bar\beta^{4/3} N_s$.
    pub subindex_lhs: f64,
    pub subindex_threshold: f64,
    /// Left side over right side of the general sub-index inequality.
    pub subindex_margin_general: f64,
    pub gamma_satisfied: bool,
    pub beta_satisfied: bool,
    pub subindex_satisfied: bool,
    pub tau: f64,
    pub delta: f64,
    pub notes: Vec<String>,
}

/// Parameters needed by [`check_regime_inputs`].
#[derive(Debug, Clone)]
pub struct RegimeInputs<'a> {
    pub betas: &'a [f64],
    pub sigmas: &'a [f64],
    pub gammas: &'a [f64],
    pub factor: SfbmParams,
    pub idio: &'a [SfbmParams],
    /// Index members and weights; `None` means equal weights over every stock.
    pub index: Option<(&'a [usize], &'a [f64])>,
}

/// Regime report for a model specification, with the index taken as the equal-weight
/// average of all stocks.
pub fn check_regime(spec: &NestedModelSpec, tau: f64, delta: f64) -> Result<RegimeReport> {
    check_regime_inputs(
        &RegimeInputs {
            betas: spec.betas(),
            sigmas: spec.sigmas(),
            gammas: spec.gammas(),
            factor: *spec.factor_mode(),
            idio: spec.idio_modes(),
            index: None,
        },
        tau,
        delta,
    )
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

pub fn check_regime_inputs(inputs: &RegimeInputs<'_>, tau: f64, delta: f64) -> Result<RegimeReport> {
    let n = inputs.betas.len();
    ensure(n > 0, || "no stocks".into())?;
    ensure(
        inputs.sigmas.len() == n && inputs.gammas.len() == n && inputs.idio.len() == n,
        || "per-stock parameter lengths differ".into(),
    )?;
    ensure(tau > 0.0 && delta > 0.0 && delta < tau, || {
        format!("need 0 < delta < tau, got delta={delta}, tau={tau}")
    })?;

    let f = &inputs.factor;
    let z = delta / tau;
    let t_over = |m: &SfbmParams| (tau / f.horizon()).powf(2.0 * (m.hurst() - f.hurst()));
    // shared factor of the general inequalities for stock i
    let rhs: Vec<f64> = inputs
        .idio
        .iter()
        .map(|m| m.intermittency_sq() / f.intermittency_sq() * t_over(m) * r_ratio(m.hurst(), f.hurst(), z))
        .collect();

    let gamma_margin: Vec<f64> = inputs.gammas.iter().map(|g| ratio(1.0, g.abs())).collect();
    let beta_upper_margin: Vec<f64> = inputs
        .betas
        .iter()
        .zip(inputs.sigmas)
        .map(|(b, s)| ratio(*s, b.abs()))
        .collect();
    let gamma_margin_general: Vec<f64> = inputs
        .gammas
        .iter()
        .zip(&rhs)
        .map(|(g, r)| ratio(*r, g * g))
        .collect();
    let beta_margin_general: Vec<f64> = inputs
        .betas
        .iter()
        .zip(inputs.sigmas)
        .zip(&rhs)
        .map(|((b, s), r)| ratio(s.powi(4) * r, b.powi(4)))
        .collect();

    let (members, weights): (Vec<usize>, Vec<f64>) = match inputs.index {
        Some((m, w)) => {
            ensure(m.len() == w.len() && !m.is_empty(), || "bad index specification".into())?;
            ensure(m.iter().all(|&i| i < n), || "index member out of range".into())?;
            (m.to_vec(), w.to_vec())
        }
        None => ((0..n).collect(), vec![1.0 / n as f64; n]),
    };
    let beta_bar: f64 = members.iter().zip(&weights).map(|(&i, w)| w * inputs.betas[i]).sum();
    let n_s = members.len() as f64;
    let subindex_lhs = beta_bar.abs().powf(4.0 / 3.0) * n_s;
    let subindex_rhs: f64 = members
        .iter()
        .zip(&weights)
        .map(|(&i, w)| w.powi(4) * inputs.sigmas[i].powi(4) * rhs[i])
        .sum();
    let subindex_margin_general = ratio(beta_bar.powi(4), subindex_rhs);

    Ok(RegimeReport {
        gamma_satisfied: gamma_margin.iter().all(|&m| m >= 1.0),
        beta_satisfied: beta_upper_margin.iter().all(|&m| m >= 1.0),
        subindex_satisfied: subindex_lhs >= MUCH_LESS_FACTOR * SUBINDEX_THRESHOLD,
        gamma_margin,
        beta_upper_margin,
        gamma_margin_general,
        beta_margin_general,
        subindex_lhs,
        subindex_threshold: SUBINDEX_THRESHOLD,
        subindex_margin_general,
        tau,
        delta,
        notes: vec![
            "simplified criteria assume lambda_i ~ lambda and H_i -> 0".into(),
            "general margins must reach 10 for the strong-inequality rule".into(),
        ],
    })
}
