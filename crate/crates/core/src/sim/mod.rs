//! Synthetic return panels from the one-factor nested S-fBM model
//!
//! $$ dx^i_t = \beta_i\, e^{\Omega_t/2} dW^0_t + \sigma_i\, e^{\tilde\omega^i_t/2} dB^i_t,
//! \qquad \tilde\omega^i = \gamma_i\Omega + \omega^i, $$
//!
//! with $\Omega$ and $\omega^i$ independent S-fBM modes sharing one horizon and
//! $\mathbb E e^{\Omega} = \mathbb E e^{\tilde\omega^i} = 1$.

mod config;
mod engine;
mod index;

pub use config::{ModeConfig, ModelConfig, ParamDraw, MODEL_SCHEMA_VERSION};
pub use engine::{
    simulate_panel, simulate_summary, NestedSimulator, PanelSummary, PanelTruth, SimulatedPanel,
    StockPath,
};
pub use index::{build_index, IndexSeries, IndexSpec};

use rand::Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::sampler::stream_rng;
use crate::theory::SfbmParams;

/// Shape parameters of the default exposure distribution.
pub const BETA_SHAPE: (f64, f64) = (9.66, 5.63);
/// Shape parameters of the default idiosyncratic-scale distribution.
pub const SIGMA_SHAPE: (f64, f64) = (13.10, 4.18);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Empirical,
}

/// Full model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct NestedModelSpec {
    betas: Vec<f64>,
    sigmas: Vec<f64>,
    gammas: Vec<f64>,
    factor_mode: SfbmParams,
    idio_modes: Vec<SfbmParams>,
    n_periods: usize,
    subdivisions: usize,
    period: f64,
    allow_span_beyond_horizon: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpec {
    betas: Vec<f64>,
    sigmas: Vec<f64>,
    gammas: Vec<f64>,
    factor_mode: SfbmParams,
    idio_modes: Vec<SfbmParams>,
    n_periods: usize,
    subdivisions: usize,
    period: f64,
    #[serde(default)]
    allow_span_beyond_horizon: bool,
}

impl TryFrom<RawSpec> for NestedModelSpec {
    type Error = Error;

    fn try_from(r: RawSpec) -> Result<Self> {
        let spec = NestedModelSpec {
            betas: r.betas,
            sigmas: r.sigmas,
            gammas: r.gammas,
            factor_mode: r.factor_mode,
            idio_modes: r.idio_modes,
            n_periods: r.n_periods,
            subdivisions: r.subdivisions,
            period: r.period,
            allow_span_beyond_horizon: r.allow_span_beyond_horizon,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<NestedModelSpec> for RawSpec {
    fn from(s: NestedModelSpec) -> Self {
        RawSpec {
            betas: s.betas,
            sigmas: s.sigmas,
            gammas: s.gammas,
            factor_mode: s.factor_mode,
            idio_modes: s.idio_modes,
            n_periods: s.n_periods,
            subdivisions: s.subdivisions,
            period: s.period,
            allow_span_beyond_horizon: s.allow_span_beyond_horizon,
        }
    }
}

impl NestedModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        betas: Vec<f64>,
        sigmas: Vec<f64>,
        gammas: Vec<f64>,
        factor_mode: SfbmParams,
        idio_modes: Vec<SfbmParams>,
        n_periods: usize,
        subdivisions: usize,
        period: f64,
    ) -> Result<Self> {
        let spec = Self {
            betas,
            sigmas,
            gammas,
            factor_mode,
            idio_modes,
            n_periods,
            subdivisions,
            period,
            allow_span_beyond_horizon: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Permits `n_periods * period > horizon`; the covariance is then zero past the horizon.
    pub fn allowing_span_beyond_horizon(mut self) -> Self {
        self.allow_span_beyond_horizon = true;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.betas.len();
        ensure(n >= 1, || "at least one stock is required".into())?;
        ensure(
            self.sigmas.len() == n && self.gammas.len() == n && self.idio_modes.len() == n,
            || "betas, sigmas, gammas and idio_modes must have the same length".into(),
        )?;
        ensure(
            self.betas.iter().chain(&self.gammas).all(|v| v.is_finite()),
            || "betas and gammas must be finite".into(),
        )?;
        ensure(self.sigmas.iter().all(|&s| s > 0.0 && s.is_finite()), || {
            "sigmas must be positive".into()
        })?;
        let t = self.factor_mode.horizon();
        ensure(self.idio_modes.iter().all(|m| m.horizon() == t), || {
            "all modes must share the factor horizon".into()
        })?;
        ensure(self.n_periods >= 2, || "need at least two periods".into())?;
        ensure(self.subdivisions >= 1, || "need at least one subdivision".into())?;
        ensure(self.period > 0.0 && self.period.is_finite(), || "period must be positive".into())?;
        ensure(
            self.allow_span_beyond_horizon || self.span() <= t * (1.0 + 1e-12),
            || format!("sample span {} exceeds horizon {t}", self.span()),
        )
    }

    pub fn n_stocks(&self) -> usize {
        self.betas.len()
    }
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
    pub fn factor_mode(&self) -> &SfbmParams {
        &self.factor_mode
    }
    pub fn idio_modes(&self) -> &[SfbmParams] {
        &self.idio_modes
    }
    pub fn n_periods(&self) -> usize {
        self.n_periods
    }
    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }
    pub fn period(&self) -> f64 {
        self.period
    }
    pub fn span_beyond_horizon_allowed(&self) -> bool {
        self.allow_span_beyond_horizon
    }
    pub fn span(&self) -> f64 {
        self.n_periods as f64 * self.period
    }
    pub fn dt(&self) -> f64 {
        self.period / self.subdivisions as f64
    }
    pub fn n_fine(&self) -> usize {
        self.n_periods * self.subdivisions
    }

    /// First `n` stocks of this specification.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        ensure(n >= 1 && n <= self.n_stocks(), || format!("cannot keep {n} stocks"))?;
        let mut s = self.clone();
        s.betas.truncate(n);
        s.sigmas.truncate(n);
        s.gammas.truncate(n);
        s.idio_modes.truncate(n);
        Ok(s)
    }

    /// Additive mean shift of $\tilde\omega^i$ making $\mathbb E e^{\tilde\omega^i} = 1$.
    pub fn residual_mean_shift(&self, i: usize) -> f64 {
        let g = self.gammas[i];
        -(g * g * self.factor_mode.nu_sq() / 2.0 + self.idio_modes[i].nu_sq() / 2.0) / 2.0
    }
}

/// Independent exposure and idiosyncratic-scale draws from Beta laws: betas from
/// stream 0 of `seed`, sigmas from stream 1.
pub fn sample_beta_sigma(
    n: usize,
    beta_params: (f64, f64),
    sigma_params: (f64, f64),
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let law = |(a, b): (f64, f64)| {
        ensure(a > 0.0 && b > 0.0, || format!("shape parameters must be positive, got ({a}, {b})"))?;
        Beta::new(a, b).map_err(|e| Error::InvalidParameter(e.to_string()))
    };
    let bl = law(beta_params)?;
    let sl = law(sigma_params)?;
    let mut rb = stream_rng(seed, 0);
    let mut rs = stream_rng(seed, 1);
    let betas = (0..n).map(|_| rb.sample(bl)).collect();
    let sigmas = (0..n).map(|_| rs.sample(sl)).collect();
    Ok((betas, sigmas))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> NestedModelSpec {
        let f = SfbmParams::new(0.11, 0.0025, 1024.0).unwrap();
        let i = SfbmParams::new(0.01, 0.0025, 1024.0).unwrap();
        NestedModelSpec::new(vec![1.0; n], vec![1.0; n], vec![0.2; n], f, vec![i; n], 1024, 4, 1.0)
            .unwrap()
    }

    #[test]
    fn validation() {
        let s = spec(3);
        assert_eq!(s.n_fine(), 4096);
        let f = *s.factor_mode();
        let bad_h = SfbmParams::new(0.01, 0.0025, 512.0).unwrap();
        assert!(NestedModelSpec::new(vec![1.0], vec![1.0], vec![0.0], f, vec![bad_h], 1024, 4, 1.0).is_err());
        assert!(NestedModelSpec::new(vec![1.0], vec![0.0], vec![0.0], f, vec![f], 1024, 4, 1.0).is_err());
        assert!(NestedModelSpec::new(vec![1.0], vec![1.0], vec![0.0], f, vec![f], 2048, 4, 1.0).is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let s = spec(2);
        let text = toml::to_string(&s).unwrap();
        let back: NestedModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn beta_sigma_moments() {
        let n = 100_000;
        let (b, s) = sample_beta_sigma(n, BETA_SHAPE, SIGMA_SHAPE, 11).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (a, bb) = BETA_SHAPE;
        let var_b = a * bb / ((a + bb).powi(2) * (a + bb + 1.0));
        assert!((mean(&b) - a / (a + bb)).abs() < 3.0 * (var_b / n as f64).sqrt());
        assert!((mean(&b) - 0.632).abs() < 1e-3);
        let (a, bb) = SIGMA_SHAPE;
        let var_s = a * bb / ((a + bb).powi(2) * (a + bb + 1.0));
        assert!((mean(&s) - a / (a + bb)).abs() < 3.0 * (var_s / n as f64).sqrt());
        let again = sample_beta_sigma(n, BETA_SHAPE, SIGMA_SHAPE, 11).unwrap();
        assert_eq!(b, again.0);
        assert!(sample_beta_sigma(3, (0.0, 1.0), SIGMA_SHAPE, 1).is_err());
    }
}
