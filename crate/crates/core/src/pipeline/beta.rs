use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: Vec<f64>,
    /// $\hat C_{ii} - \hat\beta_i^2$ per unit time.
    pub residual_var: Vec<f64>,
    /// Off-diagonal Frobenius distance between $\hat C$ and $\hat\beta\hat\beta^\top$.
    pub residual: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// Sample covariance (mean removed, divisor `L - 1`) of the rows, divided by `delta`.
pub fn covariance_per_unit_time(period_returns: &[Vec<f64>], delta: f64) -> Result<DMatrix<f64>> {
    let n = period_returns.len();
    ensure(n > 0, || "no stocks".into())?;
    let l = period_returns[0].len();
    ensure(l >= 2, || "need at least two periods".into())?;
    ensure(period_returns.iter().all(|r| r.len() == l), || "rows differ in length".into())?;
    let centered: Vec<Vec<f64>> = period_returns
        .iter()
        .map(|r| {
            let m = r.iter().sum::<f64>() / l as f64;
            r.iter().map(|x| x - m).collect()
        })
        .collect();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>()
                / ((l - 1) as f64 * delta);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

fn off_diagonal_residual(c: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
    let n = beta.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += (c[(i, j)] - beta[i] * beta[j]).powi(2);
            }
        }
    }
    s.sqrt()
}

/// Leading eigenpair by power iteration from `v`.
fn power_iteration(m: &DMatrix<f64>, mut v: DVector<f64>) -> (f64, DVector<f64>) {
    // shifting by the Gershgorin radius makes the largest eigenvalue the dominant one
    let shift = (0..m.nrows())
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    v /= v.norm();
    for _ in 0..500 {
        let mut w = m * &v + &v * shift;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        w /= norm;
        let change = (&w - &v).norm();
        v = w;
        if change < 1e-13 {
            break;
        }
    }
    let lambda = v.dot(&(m * &v));
    (lambda, v)
}

/// Gauss-Newton steps with backtracking on the off-diagonal least-squares
/// objective. Returns true once a step falls below `tol` relative to `beta`.
fn gauss_newton(c: &DMatrix<f64>, beta: &mut DVector<f64>, steps: usize, tol: f64) -> bool {
    let n = beta.len();
    for _ in 0..steps {
        let norm_sq = beta.norm_squared();
        // J^T J = beta beta^T + diag(|beta|^2 - 2 beta_i^2)
        let mut jtj = &*beta * beta.transpose();
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            jtj[(i, i)] += norm_sq - 2.0 * beta[i] * beta[i];
            rhs[i] = (0..n)
                .filter(|&k| k != i)
                .map(|k| (c[(i, k)] - beta[i] * beta[k]) * beta[k])
                .sum();
        }
        let Some(mut step) = jtj.lu().solve(&rhs) else {
            return false;
        };
        let before = off_diagonal_residual(c, beta);
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &*beta + &step;
            if off_diagonal_residual(c, &trial) <= before {
                *beta = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || step.norm() <= tol * beta.norm() {
            return accepted || before == 0.0;
        }
    }
    false
}

/// Rank-one fit $\hat C \approx \beta\beta^\top$ on the off-diagonal entries of a
/// covariance matrix (per unit time).
///
/// Starts from the leading eigenvector of $\hat C$ with its diagonal zeroed, then
/// alternates between imputing the diagonal with $\beta_i^2$ and taking the leading
/// eigenpair, and finishes with Gauss-Newton steps. Either stage converging is
/// enough.
pub fn estimate_beta_from_cov(c: &DMatrix<f64>, cfg: &BetaConfig) -> Result<BetaEstimate> {
    let n = c.nrows();
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "beta estimation needs at least 3 stocks, got {n}: the off-diagonal fit is underdetermined"
        )));
    }
    let mut off = c.clone();
    off.fill_diagonal(0.0);
    let eig = SymmetricEigen::new(off.clone());
    let (imax, &lmax) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    if lmax <= 0.0 {
        return Err(Error::Degenerate("off-diagonal covariance has no positive eigenvalue".into()));
    }
    let mut beta: DVector<f64> = eig.eigenvectors.column(imax) * lmax.sqrt();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut m = off.clone();
        for i in 0..n {
            m[(i, i)] = beta[i] * beta[i];
        }
        let (lambda, v) = power_iteration(&m, beta.clone());
        if lambda <= 0.0 {
            return Err(Error::Numerical("diagonal imputation lost the positive eigenvalue".into()));
        }
        let next = v * lambda.sqrt();
        let change = (&next - &beta).norm();
        beta = next;
        if change <= cfg.tolerance * beta.norm() {
            converged = true;
            break;
        }
    }
    let polished = gauss_newton(c, &mut beta, 100, cfg.tolerance);
    let residual = off_diagonal_residual(c, &beta);
    if !converged && !polished {
        return Err(Error::Numerical(format!(
            "beta iterations did not converge in {iterations} steps; last residual {residual:e}, last iterate {:?}",
            beta.as_slice()
        )));
    }
    if beta.sum() < 0.0 {
        beta = -beta;
    }
    let residual_var = (0..n).map(|i| c[(i, i)] - beta[i] * beta[i]).collect();
    Ok(BetaEstimate {
        beta: beta.as_slice().to_vec(),
        residual_var,
        residual,
        iterations,
        warnings: Vec::new(),
    })
}

/// [`estimate_beta_from_cov`] on per-period returns (`N x L`) of period length `delta`.
pub fn estimate_beta(period_returns: &[Vec<f64>], delta: f64, cfg: &BetaConfig) -> Result<BetaEstimate> {
    let c = covariance_per_unit_time(period_returns, delta)?;
    let mut est = estimate_beta_from_cov(&c, cfg)?;
    let (n, l) = (period_returns.len(), period_returns[0].len());
    if l < 10 * n {
        est.warnings
            .push(format!("only {l} periods for {n} stocks; at least {} recommended", 10 * n));
    }
    Ok(est)
}
