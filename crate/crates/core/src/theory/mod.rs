//! Closed-form model quantities for stationary fBM (S-fBM) log-volatility modes.
//!
//! A mode $\omega$ with Hurst exponent $H$, intermittency $\lambda^2$ and horizon $T$ has
//!
//! $$
//! \operatorname{Cov}(\omega_t,\omega_{t+\tau}) = \frac{\nu^2}{2}\Big(1-\big(|\tau|/T\big)^{2H}\Big)\mathbf 1_{|\tau|<T},
//! \qquad \nu^2 = \frac{\lambda^2}{H(1-2H)},\qquad \mathbb E\,\omega = -\nu^2/4 .
//! $$
//!
//! Everything here is a pure function; the functions double as oracles for the
//! sampler, the simulator and the calibrator.

mod error_ratio;
mod kernels;
mod regime;

pub use error_ratio::{
    error_ratio_constants_h0, small_intermittency_error_ratio, ErrorRatioConstants,
    ErrorRatioEstimate, MonteCarloBudget,
};
pub use kernels::{
    c_upsilon, c_upsilon_h, g_h, g_tilde_h, r0_bound, r_ratio, small_intermittency_v,
    small_intermittency_w,
};
pub use regime::{check_regime, check_regime_inputs, RegimeInputs, RegimeReport};
pub(crate) use kernels::d_excess;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Smallest admissible Hurst exponent.
pub const H_MIN: f64 = 1e-3;
/// Largest admissible Hurst exponent, `0.5 - 1e-3`.
pub const H_MAX: f64 = 0.5 - 1e-3;

/// One S-fBM log-volatility mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSfbmParams")]
pub struct SfbmParams {
    hurst: f64,
    intermittency_sq: f64,
    horizon: f64,
}

#[derive(Deserialize)]
struct RawSfbmParams {
    hurst: f64,
    intermittency_sq: f64,
    horizon: f64,
}

impl TryFrom<RawSfbmParams> for SfbmParams {
    type Error = Error;

    fn try_from(raw: RawSfbmParams) -> Result<Self> {
        SfbmParams::new(raw.hurst, raw.intermittency_sq, raw.horizon)
    }
}

impl SfbmParams {
    pub fn new(hurst: f64, intermittency_sq: f64, horizon: f64) -> Result<Self> {
        ensure((H_MIN..=H_MAX).contains(&hurst), || {
            format!("hurst {hurst} outside [{H_MIN}, {H_MAX}]")
        })?;
        ensure(intermittency_sq > 0.0 && intermittency_sq.is_finite(), || {
            format!("intermittency_sq must be positive, got {intermittency_sq}")
        })?;
        ensure(horizon > 0.0 && horizon.is_finite(), || {
            format!("horizon must be positive, got {horizon}")
        })?;
        Ok(Self {
            hurst,
            intermittency_sq,
            horizon,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn intermittency_sq(&self) -> f64 {
        self.intermittency_sq
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Same mode with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.hurst, self.intermittency_sq, horizon)
    }

    /// $\nu^2 = \lambda^2 / (H(1-2H))$.
    pub fn nu_sq(&self) -> f64 {
        self.intermittency_sq / (self.hurst * (1.0 - 2.0 * self.hurst))
    }

    pub fn variance(&self) -> f64 {
        0.5 * self.nu_sq()
    }

    /// Mean making $\mathbb E[e^\omega]=1$.
    pub fn mean(&self) -> f64 {
        -0.25 * self.nu_sq()
    }

    pub fn covariance(&self, tau: f64) -> f64 {
        sfbm_cov(self, tau)
    }

    /// $\mathbb E[(\omega_{t+\tau}-\omega_t)^2] = \nu^2 (|\tau|/T)^{2H}$ for $|\tau|\le T$.
    pub fn increment_variance(&self, tau: f64) -> f64 {
        2.0 * (self.variance() - self.covariance(tau))
    }
}

/// Stationary covariance of the mode at lag `tau`.
pub fn sfbm_cov(params: &SfbmParams, tau: f64) -> f64 {
    let a = tau.abs();
    if a >= params.horizon {
        return 0.0;
    }
    // 1 - (a/T)^{2H} written with expm1 so that tiny H keeps full relative precision
    let r = -(2.0 * params.hurst * (a / params.horizon).ln()).exp_m1();
    let r = if a == 0.0 { 1.0 } else { r };
    0.5 * params.nu_sq() * r
}

pub fn sfbm_mean(params: &SfbmParams) -> f64 {
    params.mean()
}

/// The vector of intermittencies $(\lambda_1,\dots,\lambda_d)$ of a set of modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermittencyVector {
    entries: Vec<f64>,
}

impl IntermittencyVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        ensure(!entries.is_empty(), || "intermittency vector is empty".into())?;
        ensure(entries.iter().all(|&l| l > 0.0 && l.is_finite()), || {
            "intermittencies must be positive".into()
        })?;
        Ok(Self { entries })
    }

    pub fn from_modes(modes: &[SfbmParams]) -> Result<Self> {
        Self::new(modes.iter().map(|m| m.intermittency_sq().sqrt()).collect())
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// $\|\Lambda\|^2$, the order of the neglected terms in the small-intermittency expansion.
    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|l| l * l).sum()
    }
}
