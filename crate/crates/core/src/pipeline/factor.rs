use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::panel::FineReturns;
use crate::vol::{VolKind, VolSeries};

/// Where the factor quadratic variation of Step 2 comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorSource {
    /// [`OffDiagonal`](Self::OffDiagonal) when fine returns are available
    /// (`subdivisions >= 2`), otherwise [`DebiasedProxy`](Self::DebiasedProxy).
    Auto,
    /// $\sum_i\beta_i^2\langle x^i\rangle / \sum_i\beta_i^4$.
    Proxy,
    /// The proxy minus its mean residual contribution
    /// $\Delta\sum_i\beta_i^2\hat D_i/\sum_i\beta_i^4$, with $\hat D_i$ the residual
    /// variance left on the diagonal by the β fit.
    DebiasedProxy,
    /// Realized cross-products between distinct stocks,
    /// $\sum_{i\ne j}\beta_i\beta_j\langle x^i,x^j\rangle / \sum_{i\ne j}\beta_i^2\beta_j^2$.
    /// Residual noise is independent across stocks, so this is unbiased for the
    /// realized factor variance.
    OffDiagonal,
    /// A supplied per-period variance series (for example Garman-Klass of an
    /// index), rescaled to mean `delta`.
    External { values: Vec<f64> },
}

impl Default for FactorSource {
    fn default() -> Self {
        FactorSource::Auto
    }
}

impl FactorSource {
    pub fn name(&self) -> &'static str {
        match self {
            FactorSource::Auto => "auto",
            FactorSource::Proxy => "proxy",
            FactorSource::DebiasedProxy => "debiased_proxy",
            FactorSource::OffDiagonal => "off_diagonal",
            FactorSource::External { .. } => "external",
        }
    }
}

fn sum_beta_powers(beta: &[f64]) -> Result<(f64, f64)> {
    let b2: f64 = beta.iter().map(|b| b * b).sum();
    let b4: f64 = beta.iter().map(|b| b.powi(4)).sum();
    if b4 == 0.0 {
        return Err(Error::Degenerate("all betas are zero".into()));
    }
    Ok((b2, b4))
}

fn check_rows(stock_qv: &[Vec<f64>], beta: &[f64]) -> Result<usize> {
    ensure(!stock_qv.is_empty(), || "no stocks".into())?;
    ensure(stock_qv.len() == beta.len(), || "beta count differs from stock count".into())?;
    let l = stock_qv[0].len();
    ensure(stock_qv.iter().all(|r| r.len() == l), || "QV rows differ in length".into())?;
    Ok(l)
}

/// Raw proxy values before flooring.
fn proxy_values(stock_qv: &[Vec<f64>], beta: &[f64]) -> Result<Vec<f64>> {
    let l = check_rows(stock_qv, beta)?;
    let (_, b4) = sum_beta_powers(beta)?;
    let mut out = vec![0.0; l];
    for (row, b) in stock_qv.iter().zip(beta) {
        let w = b * b / b4;
        for (o, q) in out.iter_mut().zip(row) {
            *o += w * q;
        }
    }
    Ok(out)
}

/// $\langle\hat f\rangle = \sum_i\beta_i^2\langle x^i\rangle / \sum_i\beta_i^4$ per period.
pub fn factor_qv_proxy(stock_qv: &[Vec<f64>], beta: &[f64], delta: f64) -> Result<VolSeries> {
    VolSeries::new(proxy_values(stock_qv, beta)?, delta, VolKind::Proxy)
}

/// The proxy with the mean residual contribution removed.
pub fn factor_qv_debiased_proxy(
    stock_qv: &[Vec<f64>],
    beta: &[f64],
    residual_var: &[f64],
    delta: f64,
) -> Result<VolSeries> {
    ensure(residual_var.len() == beta.len(), || "residual variance count differs".into())?;
    let (_, b4) = sum_beta_powers(beta)?;
    let bias = delta
        * beta
            .iter()
            .zip(residual_var)
            .map(|(b, d)| b * b * d.max(0.0))
            .sum::<f64>()
        / b4;
    let values = proxy_values(stock_qv, beta)?.into_iter().map(|v| v - bias).collect();
    VolSeries::new(values, delta, VolKind::Proxy)
}

/// Off-diagonal realized factor variance from fine returns.
pub fn factor_qv_off_diagonal(source: &dyn FineReturns, beta: &[f64]) -> Result<VolSeries> {
    Ok(factor_fine_pass(source, beta)?.0)
}

/// One pass over the stocks giving the off-diagonal factor variance and the
/// fine-grid sums $\sum_jeta_j\,\delta x^j$.
pub fn factor_fine_pass(source: &dyn FineReturns, beta: &[f64]) -> Result<(VolSeries, Vec<f64>)> {
    let n = source.n_stocks();
    ensure(beta.len() == n, || "beta count differs from stock count".into())?;
    let s = source.subdivisions();
    ensure(s >= 2, || "off-diagonal factor variance needs at least two steps per period".into())?;
    let (b2, b4) = sum_beta_powers(beta)?;
    let denom = b2 * b2 - b4;
    if denom <= 0.0 {
        return Err(Error::Degenerate("fewer than two stocks with non-zero beta".into()));
    }
    let nf = source.n_fine();
    let mut lin = vec![0.0; nf];
    let mut diag = vec![0.0; nf];
    for (i, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let r = source.stock_returns(i);
        for k in 0..nf {
            lin[k] += b * r[k];
            diag[k] += b * b * r[k] * r[k];
        }
    }
    let values = lin
        .chunks_exact(s)
        .zip(diag.chunks_exact(s))
        .map(|(u, v)| u.iter().zip(v).map(|(a, d)| a * a - d).sum::<f64>() / denom)
        .collect();
    Ok((VolSeries::new(values, source.period(), VolKind::RealizedQv)?, lin))
}

/// Realized variance of the fine residual returns $\delta x^i - eta_i\,\delta\hat F_{-i}$,
/// where $\delta\hat F_{-i}$ is the cross-sectional factor return of the other stocks.
///
/// Unlike [`residual_qv`] this carries no $2eta_i\sum\delta F\,\delta\epsilon^i$ cross
/// term, whose spread grows with the factor level.
pub fn residual_qv_fine(
    returns: &[f64],
    beta: &[f64],
    i: usize,
    lin: &[f64],
    subdivisions: usize,
    period: f64,
) -> Result<VolSeries> {
    ensure(returns.len() == lin.len(), || "fine series differ in length".into())?;
    ensure(subdivisions >= 1 && returns.len() % subdivisions == 0, || {
        "fine length is not a multiple of the subdivisions".into()
    })?;
    let bi = beta[i];
    let rest = beta.iter().map(|b| b * b).sum::<f64>() - bi * bi;
    if rest <= 0.0 {
        return Err(Error::Degenerate(format!("no other stock with non-zero beta than {i}")));
    }
    let values = returns
        .chunks_exact(subdivisions)
        .zip(lin.chunks_exact(subdivisions))
        .map(|(x, u)| {
            x.iter()
                .zip(u)
                .map(|(x, u)| (x - bi * (u - bi * x) / rest).powi(2))
                .sum::<f64>()
        })
        .collect();
    VolSeries::new(values, period, VolKind::RealizedQv)
}

/// External series rescaled to mean `delta`.
pub fn factor_qv_external(values: &[f64], n_periods: usize, delta: f64) -> Result<VolSeries> {
    if values.len() != n_periods {
        return Err(Error::Data(format!(
            "external factor series has {} periods, panel has {n_periods}",
            values.len()
        )));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Data("external factor series has no positive mean".into()));
    }
    let scaled = values.iter().map(|v| v * delta / mean).collect();
    VolSeries::new(scaled, delta, VolKind::Proxy)
}

/// $\hat f_t = \hat\beta^\top X_t / \hat\beta^\top\hat\beta$.
pub fn estimate_factor_series(period_returns: &[Vec<f64>], beta: &[f64]) -> Result<Vec<f64>> {
    let l = check_rows(period_returns, beta)?;
    let b2: f64 = beta.iter().map(|b| b * b).sum();
    if b2 == 0.0 {
        return Err(Error::Degenerate("beta has zero norm".into()));
    }
    let mut f = vec![0.0; l];
    for (row, b) in period_returns.iter().zip(beta) {
        for (o, x) in f.iter_mut().zip(row) {
            *o += b * x / b2;
        }
    }
    Ok(f)
}

/// $\langle\hat\epsilon^i\rangle = \langle x^i\rangle - \beta_i^2\langle\hat f\rangle$, floored.
pub fn residual_qv(stock_qv: &[f64], beta_i: f64, factor_qv: &VolSeries) -> Result<VolSeries> {
    if stock_qv.len() != factor_qv.len() {
        return Err(Error::InvalidParameter(format!(
            "stock QV has {} periods, factor QV has {}",
            stock_qv.len(),
            factor_qv.len()
        )));
    }
    let values = stock_qv
        .iter()
        .zip(factor_qv.values())
        .map(|(x, f)| x - beta_i * beta_i * f)
        .collect();
    VolSeries::new(values, factor_qv.delta(), VolKind::RealizedQv)
}

/// How $\gamma_i$ is read off the residual and factor log-volatilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMethod {
    /// $\widehat{\mathrm{Cov}}(\tilde\omega^i,\hat\Omega)/\widehat{\mathrm{Var}}(\hat\Omega)$.
    Ols,
    /// Ratio of lagged cross-covariances to lagged autocovariances over lags
    /// `1..=max_lag`. Measurement noise that is independent across periods drops
    /// out, so the estimate is not attenuated by it.
    LaggedIv { max_lag: usize },
}

impl Default for GammaMethod {
    fn default() -> Self {
        GammaMethod::LaggedIv { max_lag: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaFit {
    pub gamma: f64,
    /// $\omega^i = \tilde\omega^i - \hat\gamma_i\hat\Omega$ (both centered).
    pub idio: Vec<f64>,
    /// Set when the lagged estimator had no usable signal and OLS was used.
    pub fell_back_to_ols: bool,
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn cross(a: &[f64], b: &[f64], lag: usize) -> f64 {
    a[lag..].iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Regresses the residual log-volatility on the factor log-volatility.
pub fn estimate_gamma_and_idio(residual: &[f64], factor: &[f64], method: GammaMethod) -> Result<GammaFit> {
    ensure(residual.len() == factor.len(), || "series differ in length".into())?;
    ensure(residual.len() >= 2, || "series too short".into())?;
    let r = centered(residual);
    let f = centered(factor);
    let var = cross(&f, &f, 0);
    if var == 0.0 {
        return Err(Error::Degenerate("factor log-volatility has zero variance".into()));
    }
    let ols = cross(&r, &f, 0) / var;
    let (gamma, fell_back_to_ols) = match method {
        GammaMethod::Ols => (ols, false),
        GammaMethod::LaggedIv { max_lag } => {
            ensure(max_lag >= 1 && 2 * max_lag < r.len(), || "invalid lag range".into())?;
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 1..=max_lag {
                num += cross(&r, &f, k) + cross(&f, &r, k);
                den += 2.0 * cross(&f, &f, k);
            }
            if den > 0.0 {
                (num / den, false)
            } else {
                (ols, true)
            }
        }
    };
    let idio = r.iter().zip(&f).map(|(a, b)| a - gamma * b).collect();
    Ok(GammaFit {
        gamma,
        idio,
        fell_back_to_ols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::ReturnsPanel;
    use crate::sim::Provenance;

    #[test]
    fn proxy_collapses() {
        let q = vec![vec![1.0, 2.0, 3.0]];
        assert_eq!(factor_qv_proxy(&q, &[1.0], 1.0).unwrap().values(), &[1.0, 2.0, 3.0]);
        let q = vec![vec![1.0, 2.0], vec![3.0, 6.0]];
        let p = factor_qv_proxy(&q, &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(p.values(), &[8.0, 16.0]);
        assert!(factor_qv_proxy(&q, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn off_diagonal_is_exact_without_residuals() {
        let f = [0.3, -0.1, 0.2, 0.4];
        let beta = [0.5, 1.0, 1.5];
        let rows: Vec<Vec<f64>> = beta.iter().map(|b| f.iter().map(|x| b * x).collect()).collect();
        let panel = ReturnsPanel::new(rows, 2, 1.0, Provenance::Synthetic).unwrap();
        let q = factor_qv_off_diagonal(&panel, &beta).unwrap();
        assert!((q.values()[0] - 0.1).abs() < 1e-15);
        assert!((q.values()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn factor_series_projection() {
        let beta = [0.5, 1.0, 2.0];
        let c = [1.0, -2.0, 0.25];
        let x: Vec<Vec<f64>> = beta.iter().map(|b| c.iter().map(|v| b * v).collect()).collect();
        let f = estimate_factor_series(&x, &beta).unwrap();
        for (a, b) in f.iter().zip(c) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fine_residuals_are_exact_for_a_pure_factor_plus_own_noise() {
        // stock 0 carries its own noise; the others are pure factor
        let f = [0.3, -0.1, 0.2, 0.4];
        let e = [0.05, 0.0, -0.02, 0.01];
        let beta = [1.0, 0.5, 2.0];
        let rows: Vec<Vec<f64>> = beta
            .iter()
            .enumerate()
            .map(|(i, b)| f.iter().zip(e).map(|(x, n)| b * x + if i == 0 { n } else { 0.0 }).collect())
            .collect();
        let panel = ReturnsPanel::new(rows.clone(), 2, 1.0, Provenance::Synthetic).unwrap();
        let (_, lin) = factor_fine_pass(&panel, &beta).unwrap();
        let q = residual_qv_fine(&rows[0], &beta, 0, &lin, 2, 1.0).unwrap();
        assert!((q.values()[0] - (0.05f64.powi(2))).abs() < 1e-15);
        assert!((q.values()[1] - (0.02f64.powi(2) + 0.01f64.powi(2))).abs() < 1e-15);
        let q1 = residual_qv_fine(&rows[1], &beta, 1, &lin, 2, 1.0).unwrap();
        // stock 1 sees the factor estimated from stocks 0 and 2
        let expect: f64 = (0..2).map(|k| (0.5 * 1.0 * e[k] / 5.0f64).powi(2)).sum();
        assert!((q1.values()[0] - expect).abs() < 1e-15, "{} {expect}", q1.values()[0]);
    }

    #[test]
    fn residual_qv_zero_beta_is_identity() {
        let fq = VolSeries::new(vec![1.0, 2.0], 1.0, VolKind::Proxy).unwrap();
        assert_eq!(residual_qv(&[3.0, 4.0], 0.0, &fq).unwrap().values(), &[3.0, 4.0]);
        let r = residual_qv(&[3.0, 1.0], 1.0, &fq).unwrap();
        assert_eq!(r.floor_count(), 1);
        assert!(residual_qv(&[3.0], 0.0, &fq).is_err());
    }

    #[test]
    fn gamma_of_identical_series_is_one() {
        let f: Vec<f64> = (0..200).map(|t| (t as f64 * 0.1).sin() + 0.01 * t as f64).collect();
        for m in [GammaMethod::Ols, GammaMethod::default()] {
            let g = estimate_gamma_and_idio(&f, &f, m).unwrap();
            assert!((g.gamma - 1.0).abs() < 1e-12);
            assert!(g.idio.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn ols_residual_is_orthogonal() {
        let f: Vec<f64> = (0..300).map(|t| (t as f64 * 0.37).sin()).collect();
        let r: Vec<f64> = (0..300).map(|t| 0.3 * f[t] + (t as f64 * 1.3).cos()).collect();
        let g = estimate_gamma_and_idio(&r, &f, GammaMethod::Ols).unwrap();
        let fc = centered(&f);
        let dot: f64 = g.idio.iter().zip(&fc).map(|(a, b)| a * b).sum();
        let norm = (g.idio.iter().map(|v| v * v).sum::<f64>() * fc.iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert!((dot / norm).abs() <= 1e-12);
    }
}
