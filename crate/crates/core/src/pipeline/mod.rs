//! Five-step calibration of the nested model from a panel of stock returns.
//!
//! 1. β from the off-diagonal covariance of period returns.
//! 2. Factor quadratic variation (see [`FactorSource`]).
//! 3. $(H,\lambda^2)$ of the factor from its Gaussianized log-QV.
//! 4. Residual QVs, from fine residual returns when available, otherwise
//!    $\langle x^i\rangle - \hat\beta_i^2\langle\hat f\rangle$.
//! 5. $\gamma_i$ by regressing residual log-vol on factor log-vol, then
//!    $(H_i,\lambda_i^2)$ of what is left.
//!
//! Log series are Gaussianized and brought back to their original spread before
//! fitting, so $\hat\lambda^2$ keeps the scale of the log-QV.

mod beta;
mod factor;

pub use beta::{covariance_per_unit_time, estimate_beta, estimate_beta_from_cov, BetaConfig, BetaEstimate};
pub use factor::{
    estimate_factor_series, estimate_gamma_and_idio, factor_qv_debiased_proxy, factor_qv_external,
    factor_fine_pass, factor_qv_off_diagonal, factor_qv_proxy, residual_qv, residual_qv_fine, FactorSource, GammaFit, GammaMethod,
};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::io::OhlcPanel;
use crate::gmm::{fit_hurst, fit_hurst_multi_lagset, GmmConfig, HurstFit, MultiLagsetFit, DEFAULT_Q_RANGE};
use crate::panel::{aggregate, block_sum_sq, FineReturns};
use crate::theory::{check_regime_inputs, RegimeInputs, RegimeReport, SfbmParams};
use crate::vol::{gaussianize, VolSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub factor_source: FactorSource,
    pub gmm: GmmConfig,
    pub gamma_method: GammaMethod,
    pub beta: BetaConfig,
    /// Rank-Gaussianize log series before fitting.
    pub gaussianize: bool,
    /// Lag (in periods) at which the regime conditions are evaluated.
    pub regime_tau: f64,
    /// Also fit every stock's own log-QV (no factor removal), for comparison.
    pub fit_stock_qv: bool,
    /// Build residual QVs from fine residual returns when fine returns are
    /// available.
    pub fine_residuals: bool,
    /// Number of random lag sets (`Q` uniform in `DEFAULT_Q_RANGE`) averaged for
    /// the headline factor Hurst exponent; 0 keeps the single fit.
    pub factor_lagset_trials: usize,
    pub lagset_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            factor_source: FactorSource::Auto,
            gmm: GmmConfig::default(),
            gamma_method: GammaMethod::default(),
            beta: BetaConfig::default(),
            gaussianize: true,
            regime_tau: 16.0,
            fit_stock_qv: false,
            fine_residuals: true,
            factor_lagset_trials: 20,
            lagset_seed: 0,
        }
    }
}

/// Period-level inputs: returns and variance estimates per stock.
pub struct CalibrationInput<'a> {
    pub tickers: Vec<String>,
    pub period_returns: Vec<Vec<f64>>,
    /// Realized or Garman-Klass variance per period.
    pub stock_qv: Vec<Vec<f64>>,
    pub delta: f64,
    /// Needed by [`FactorSource::OffDiagonal`].
    pub fine: Option<&'a dyn FineReturns>,
    /// Series whose log is correlated with $\hat\Omega$ in the diagnostics.
    pub reference: Option<Vec<f64>>,
    pub dropped_periods: usize,
}

impl<'a> CalibrationInput<'a> {
    /// Period returns and realized variances of every stock of `source`.
    pub fn from_fine(source: &'a dyn FineReturns) -> Result<Self> {
        let s = source.subdivisions();
        ensure(s >= 2, || "realized variance needs at least two steps per period".into())?;
        let n = source.n_stocks();
        let chunk = rayon::current_num_threads().max(1) * 2;
        let mut period_returns = Vec::with_capacity(n);
        let mut stock_qv = Vec::with_capacity(n);
        for start in (0..n).step_by(chunk) {
            let rows: Vec<(Vec<f64>, Vec<f64>)> = (start..(start + chunk).min(n))
                .into_par_iter()
                .map(|i| {
                    let r = source.stock_returns(i);
                    (aggregate(&r, s), block_sum_sq(&r, s))
                })
                .collect();
            for (p, q) in rows {
                period_returns.push(p);
                stock_qv.push(q);
            }
        }
        Ok(Self {
            tickers: source.tickers(),
            period_returns,
            stock_qv,
            delta: source.period(),
            fine: Some(source),
            reference: None,
            dropped_periods: 0,
        })
    }

    /// Period returns and variance estimates without fine data (daily bars, for
    /// example), with period length `delta`.
    pub fn from_periods(
        tickers: Vec<String>,
        period_returns: Vec<Vec<f64>>,
        stock_qv: Vec<Vec<f64>>,
        delta: f64,
    ) -> Result<Self> {
        let n = tickers.len();
        ensure(n > 0, || "no stocks".into())?;
        ensure(period_returns.len() == n && stock_qv.len() == n, || {
            "tickers, returns and variances disagree on the number of stocks".into()
        })?;
        let l = period_returns[0].len();
        ensure(
            period_returns.iter().chain(&stock_qv).all(|r| r.len() == l),
            || "rows differ in length".into(),
        )?;
        ensure(delta > 0.0, || "period length must be positive".into())?;
        Ok(Self {
            tickers,
            period_returns,
            stock_qv,
            delta,
            fine: None,
            reference: None,
            dropped_periods: 0,
        })
    }

    /// Daily close-to-close returns and Garman-Klass variances (`delta = 1`).
    pub fn from_ohlc(panel: &OhlcPanel) -> Result<Self> {
        Self::from_periods(
            panel.tickers.clone(),
            panel.returns.clone(),
            panel.gk.iter().map(|v| v.values().to_vec()).collect(),
            1.0,
        )
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Self {
        self.reference = Some(reference);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub factor_source: String,
    /// Residual QVs came from fine residual returns.
    pub fine_residuals: bool,
    pub factor_floor_count: usize,
    pub residual_floor_counts: Vec<usize>,
    pub beta_iterations: usize,
    pub beta_residual: f64,
    /// Median of the plain proxy over the factor QV actually used.
    pub proxy_ratio_median: f64,
    /// Correlation of $\hat\Omega$ with the log of the reference series.
    pub reference_correlation: Option<f64>,
    /// Stocks whose γ fell back to OLS.
    pub gamma_ols_fallbacks: Vec<usize>,
    pub dropped_periods: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tickers: Vec<String>,
    pub n_periods: usize,
    pub delta: f64,
    pub beta_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub factor_fit: HurstFit,
    pub factor_lagsets: Option<MultiLagsetFit>,
    pub idio_fits: Vec<HurstFit>,
    /// Fits of each stock's raw log-QV, when requested.
    pub stock_fits: Option<Vec<HurstFit>>,
    pub regime: Option<RegimeReport>,
    pub diagnostics: Diagnostics,
    pub config: PipelineConfig,
}

impl CalibrationReport {
    /// Lag-set average when available, otherwise the single fit.
    pub fn factor_hurst(&self) -> f64 {
        self.factor_lagsets.as_ref().map_or(self.factor_fit.hurst, |m| m.mean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-stock table: `ticker,beta,sigma,gamma,H_i,lambda_i_sq,se,flags`.
    pub fn write_stock_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        w.write_record(["ticker", "beta", "sigma", "gamma", "H_i", "lambda_i_sq", "se", "flags"])
            .map_err(io)?;
        for i in 0..self.tickers.len() {
            let fit = &self.idio_fits[i];
            let flags: Vec<String> = fit
                .flags
                .iter()
                .map(|f| serde_json::to_value(f).expect("flag").as_str().unwrap_or_default().to_string())
                .collect();
            w.write_record([
                self.tickers[i].clone(),
                format!("{}", self.beta_hat[i]),
                format!("{}", self.sigma_hat[i]),
                format!("{}", self.gamma_hat[i]),
                format!("{}", fit.hurst),
                format!("{}", fit.lambda_sq),
                fit.se.map(|s| format!("{}", s.hurst)).unwrap_or_default(),
                flags.join(";"),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string())(e))
    }
}

/// Gaussianized log series, centered, at the spread of the centered log series.
pub fn log_vol_series(series: &VolSeries, gaussianize_it: bool) -> Result<Vec<f64>> {
    let logs = series.log_values();
    if gaussianize_it {
        let g = gaussianize(&logs)?;
        Ok(g.values().iter().map(|v| v * g.source_sd()).collect())
    } else {
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        Ok(logs.iter().map(|v| v - m).collect())
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs Steps 1 to 5 on a fine-grid panel.
pub fn run_calibration(source: &dyn FineReturns, cfg: &PipelineConfig) -> Result<CalibrationReport> {
    let input = CalibrationInput::from_fine(source).map_err(Error::at_step(1))?;
    run_calibration_input(&input, cfg)
}

/// Runs Steps 1 to 5 on period-level inputs. Errors carry the failing step.
pub fn run_calibration_input(input: &CalibrationInput<'_>, cfg: &PipelineConfig) -> Result<CalibrationReport> {
    let n = input.period_returns.len();
    let l = input.period_returns.first().map_or(0, |r| r.len());
    let delta = input.delta;
    ensure(input.stock_qv.len() == n && input.tickers.len() == n, || {
        "inputs disagree on the number of stocks".into()
    })?;
    let mut warnings = Vec::new();

    // Step 1
    let beta = estimate_beta(&input.period_returns, delta, &cfg.beta).map_err(Error::at_step(1))?;
    warnings.extend(beta.warnings.iter().cloned());

    // Step 2
    let source = match (&cfg.factor_source, input.fine) {
        (FactorSource::Auto, Some(f)) if f.subdivisions() >= 2 => FactorSource::OffDiagonal,
        (FactorSource::Auto, _) => FactorSource::DebiasedProxy,
        (other, _) => other.clone(),
    };
    let mut fine_lin = None;
    let factor_qv = match &source {
        FactorSource::Proxy => factor_qv_proxy(&input.stock_qv, &beta.beta, delta),
        FactorSource::DebiasedProxy => {
            factor_qv_debiased_proxy(&input.stock_qv, &beta.beta, &beta.residual_var, delta)
        }
        FactorSource::OffDiagonal => match input.fine {
            Some(f) => factor_fine_pass(f, &beta.beta).map(|(q, lin)| {
                fine_lin = Some(lin);
                q
            }),
            None => Err(Error::InvalidParameter("off-diagonal factor source needs fine returns".into())),
        },
        FactorSource::External { values } => factor_qv_external(values, l, delta),
        FactorSource::Auto => unreachable!("resolved above"),
    }
    .map_err(Error::at_step(2))?;
    let proxy = factor_qv_proxy(&input.stock_qv, &beta.beta, delta).map_err(Error::at_step(2))?;
    let proxy_ratio_median = median(
        proxy
            .values()
            .iter()
            .zip(factor_qv.values())
            .map(|(p, f)| p / f)
            .collect(),
    );
    let omega = log_vol_series(&factor_qv, cfg.gaussianize).map_err(Error::at_step(2))?;
    let reference_correlation = match &input.reference {
        Some(r) if r.len() == omega.len() => {
            let logs: Vec<f64> = r.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
            Some(correlation(&omega, &logs))
        }
        Some(_) => {
            warnings.push("reference series length differs from the panel; correlation skipped".into());
            None
        }
        None => None,
    };

    // Step 3
    let factor_fit = fit_hurst(&omega, &cfg.gmm, delta).map_err(Error::at_step(3))?;
    let factor_lagsets = if cfg.factor_lagset_trials > 0 {
        let quick = GmmConfig {
            jackknife_blocks: 0,
            ..cfg.gmm.clone()
        };
        match fit_hurst_multi_lagset(&omega, &quick, delta, DEFAULT_Q_RANGE, cfg.factor_lagset_trials, cfg.lagset_seed) {
            Ok(m) => Some(m),
            Err(e) => {
                warnings.push(format!("lag-set average skipped: {e}"));
                None
            }
        }
    } else {
        None
    };

    // Steps 4 and 5, per stock
    if cfg.fine_residuals && fine_lin.is_none() {
        if let Some(f) = input.fine.filter(|f| f.subdivisions() >= 2) {
            fine_lin = Some(factor_fine_pass(f, &beta.beta).map_err(Error::at_step(4))?.1);
        }
    }
    let fine_resid = match (cfg.fine_residuals, input.fine, &fine_lin) {
        (true, Some(f), Some(lin)) => Some((f, lin)),
        _ => None,
    };
    let per_stock: Vec<Result<(VolSeries, GammaFit, HurstFit)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let resid = match fine_resid {
                Some((f, lin)) => {
                    residual_qv_fine(&f.stock_returns(i), &beta.beta, i, lin, f.subdivisions(), delta)
                }
                None => residual_qv(&input.stock_qv[i], beta.beta[i], &factor_qv),
            }
            .map_err(Error::at_step(4))?;
            let tilde = log_vol_series(&resid, cfg.gaussianize).map_err(Error::at_step(4))?;
            let g = estimate_gamma_and_idio(&tilde, &omega, cfg.gamma_method).map_err(Error::at_step(5))?;
            let fit = fit_hurst(&g.idio, &cfg.gmm, delta).map_err(Error::at_step(5))?;
            Ok((resid, g, fit))
        })
        .collect();
    let mut sigma_hat = Vec::with_capacity(n);
    let mut gamma_hat = Vec::with_capacity(n);
    let mut idio_fits = Vec::with_capacity(n);
    let mut residual_floor_counts = Vec::with_capacity(n);
    let mut gamma_ols_fallbacks = Vec::new();
    for (i, r) in per_stock.into_iter().enumerate() {
        let (resid, g, fit) = r?;
        sigma_hat.push((resid.values().iter().sum::<f64>() / (resid.len() as f64 * delta)).sqrt());
        residual_floor_counts.push(resid.floor_count());
        if g.fell_back_to_ols {
            gamma_ols_fallbacks.push(i);
        }
        gamma_hat.push(g.gamma);
        idio_fits.push(fit);
    }

    let stock_fits = if cfg.fit_stock_qv {
        let fits: Result<Vec<HurstFit>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let v = VolSeries::new(input.stock_qv[i].clone(), delta, crate::vol::VolKind::RealizedQv)?;
                fit_hurst(&log_vol_series(&v, cfg.gaussianize)?, &cfg.gmm, delta)
            })
            .collect();
        Some(fits.map_err(Error::at_step(5))?)
    } else {
        None
    };

    let span = l as f64 * delta;
    let regime = regime_from_estimates(&beta.beta, &sigma_hat, &gamma_hat, &factor_fit, &idio_fits, span, cfg.regime_tau * delta, delta);
    let regime = match regime {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("regime check skipped: {e}"));
            None
        }
    };

    Ok(CalibrationReport {
        tickers: input.tickers.clone(),
        n_periods: l,
        delta,
        beta_hat: beta.beta.clone(),
        sigma_hat,
        gamma_hat,
        factor_fit,
        factor_lagsets,
        idio_fits,
        stock_fits,
        regime,
        diagnostics: Diagnostics {
            factor_source: source.name().to_string(),
            fine_residuals: fine_resid.is_some(),
            factor_floor_count: factor_qv.floor_count(),
            residual_floor_counts,
            beta_iterations: beta.iterations,
            beta_residual: beta.residual,
            proxy_ratio_median,
            reference_correlation,
            gamma_ols_fallbacks,
            dropped_periods: input.dropped_periods,
            warnings,
        },
        config: cfg.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn regime_from_estimates(
    beta: &[f64],
    sigma: &[f64],
    gamma: &[f64],
    factor: &HurstFit,
    idio: &[HurstFit],
    span: f64,
    tau: f64,
    delta: f64,
) -> Result<RegimeReport> {
    // fits on the λ² = 0 boundary enter the margins at a tiny positive value
    let floored = std::iter::once(factor).chain(idio).filter(|f| f.lambda_sq < LAMBDA_SQ_FLOOR).count();
    let params = |f: &HurstFit| SfbmParams::new(f.hurst, f.lambda_sq.max(LAMBDA_SQ_FLOOR), span);
    let factor = params(factor)?;
    let idio: Vec<SfbmParams> = idio.iter().map(params).collect::<Result<_>>()?;
    let mut report = check_regime_inputs(
        &RegimeInputs {
            betas: beta,
            sigmas: sigma,
            gammas: gamma,
            factor,
            idio: &idio,
            index: None,
        },
        tau,
        delta,
    )?;
    if floored > 0 {
        report
            .notes
            .push(format!("{floored} fitted intermittencies at zero were floored to {LAMBDA_SQ_FLOOR:e}"));
    }
    Ok(report)
}

const LAMBDA_SQ_FLOOR: f64 = 1e-12;
