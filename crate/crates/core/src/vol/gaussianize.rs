use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_GAUSSIANIZE_LEN: usize = 30;

/// Rank-transformed series with standard-normal marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianizedSeries {
    values: Vec<f64>,
    /// Average ranks (1-based) of the source values.
    ranks: Vec<f64>,
    source_mean: f64,
    source_sd: f64,
}

impl GaussianizedSeries {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }

    pub fn source_mean(&self) -> f64 {
        self.source_mean
    }

    /// Population standard deviation of the source values.
    pub fn source_sd(&self) -> f64 {
        self.source_sd
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The output rescaled to the source mean and spread.
    pub fn rescaled(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| self.source_mean + self.source_sd * v)
            .collect()
    }
}

fn average_ranks(y: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut ranks = vec![0.0; y.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && y[order[end]] == y[order[start]] {
            end += 1;
        }
        // positions start..end share the rank (start+1 + end)/2
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// $\tilde X_t = \Phi^{-1}(\mathrm{rank}_t/(n+1))$, then standardized to zero mean
/// and unit variance. Ties share their average rank.
pub fn gaussianize(y: &[f64]) -> Result<GaussianizedSeries> {
    let n = y.len();
    if n < MIN_GAUSSIANIZE_LEN {
        return Err(Error::Data(format!(
            "gaussianize needs at least {MIN_GAUSSIANIZE_LEN} values, got {n}"
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at position {i}")));
    }
    let nf = n as f64;
    let source_mean = y.iter().sum::<f64>() / nf;
    let source_sd = (y.iter().map(|v| (v - source_mean).powi(2)).sum::<f64>() / nf).sqrt();
    if source_sd == 0.0 {
        return Err(Error::Degenerate("gaussianize input is constant".into()));
    }
    let ranks = average_ranks(y);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut values: Vec<f64> = ranks.iter().map(|r| normal.inverse_cdf(r / (nf + 1.0))).collect();
    let m = values.iter().sum::<f64>() / nf;
    let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf).sqrt();
    for v in &mut values {
        *v = (*v - m) / sd;
    }
    Ok(GaussianizedSeries {
        values,
        ranks,
        source_mean,
        source_sd,
    })
}
