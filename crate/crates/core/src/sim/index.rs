use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::panel::ReturnsPanel;

/// A weighted basket of stocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSpec {
    members: Vec<usize>,
    weights: Vec<f64>,
}

impl IndexSpec {
    pub fn new(members: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        ensure(!members.is_empty(), || "index has no members".into())?;
        ensure(members.len() == weights.len(), || "members and weights differ in length".into())?;
        ensure(weights.iter().all(|&w| w > 0.0 && w.is_finite()), || {
            "index weights must be positive".into()
        })?;
        let total: f64 = weights.iter().sum();
        ensure((total - 1.0).abs() <= 1e-12, || format!("weights sum to {total}, not 1"))?;
        let mut sorted = members.clone();
        sorted.sort_unstable();
        sorted.dedup();
        ensure(sorted.len() == members.len(), || "index members must be distinct".into())?;
        Ok(Self { members, weights })
    }

    pub fn equal_weight(members: Vec<usize>) -> Result<Self> {
        let w = 1.0 / members.len().max(1) as f64;
        let weights = vec![w; members.len()];
        // rounding of n * (1/n) stays far inside the 1e-12 tolerance
        Self::new(members, weights)
    }

    /// Equal weights over stocks `0..n`.
    pub fn all(n: usize) -> Result<Self> {
        Self::equal_weight((0..n).collect())
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub(crate) fn check_range(&self, n: usize) -> Result<()> {
        ensure(self.members.iter().all(|&m| m < n), || {
            format!("index member out of range for {n} stocks")
        })
    }

    /// $\bar\beta = \sum_i w_i\beta_i$.
    pub fn beta_bar(&self, betas: &[f64]) -> f64 {
        self.members.iter().zip(&self.weights).map(|(&i, w)| w * betas[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub returns: Vec<f64>,
    pub beta_bar: Option<f64>,
}

/// Fine-grid returns of the basket, $\delta I = \sum_i w_i\,\delta x^i$.
pub fn build_index(panel: &ReturnsPanel, index: &IndexSpec) -> Result<IndexSeries> {
    index.check_range(panel.n_stocks())?;
    let mut returns = vec![0.0; panel.n_fine()];
    for (&i, &w) in index.members.iter().zip(&index.weights) {
        for (r, x) in returns.iter_mut().zip(&panel.fine_returns[i]) {
            *r += w * x;
        }
    }
    Ok(IndexSeries {
        returns,
        beta_bar: panel.betas.as_ref().map(|b| index.beta_bar(b)),
    })
}
