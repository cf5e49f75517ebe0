use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::sim::Provenance;

/// Fine-grid returns of `N` stocks over `L` periods of `subdivisions` steps each.
///
/// Empirical daily panels use `subdivisions = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnsPanel {
    pub fine_returns: Vec<Vec<f64>>,
    /// Factor increments, only known for synthetic panels.
    pub factor_returns: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
    pub tickers: Vec<String>,
    pub subdivisions: usize,
    pub period: f64,
    pub provenance: Provenance,
}

impl ReturnsPanel {
    pub fn new(
        fine_returns: Vec<Vec<f64>>,
        subdivisions: usize,
        period: f64,
        provenance: Provenance,
    ) -> Result<Self> {
        ensure(!fine_returns.is_empty(), || "panel has no stocks".into())?;
        ensure(subdivisions >= 1, || "subdivisions must be at least 1".into())?;
        ensure(period > 0.0, || "period must be positive".into())?;
        let n_fine = fine_returns[0].len();
        ensure(n_fine > 0 && n_fine % subdivisions == 0, || {
            format!("row length {n_fine} is not a positive multiple of {subdivisions}")
        })?;
        ensure(fine_returns.iter().all(|r| r.len() == n_fine), || {
            "rows have different lengths".into()
        })?;
        ensure(fine_returns.iter().flatten().all(|x| x.is_finite()), || {
            "panel contains non-finite returns".into()
        })?;
        let tickers = (1..=fine_returns.len()).map(|i| format!("x_{i}")).collect();
        Ok(Self {
            fine_returns,
            factor_returns: None,
            betas: None,
            tickers,
            subdivisions,
            period,
            provenance,
        })
    }

    pub fn with_betas(mut self, betas: Vec<f64>) -> Result<Self> {
        ensure(betas.len() == self.n_stocks(), || "beta count differs from stock count".into())?;
        self.betas = Some(betas);
        Ok(self)
    }

    pub fn with_factor_returns(mut self, f: Vec<f64>) -> Result<Self> {
        ensure(f.len() == self.n_fine(), || "factor length differs from panel length".into())?;
        self.factor_returns = Some(f);
        Ok(self)
    }

    pub fn with_tickers(mut self, tickers: Vec<String>) -> Result<Self> {
        ensure(tickers.len() == self.n_stocks(), || "ticker count differs from stock count".into())?;
        self.tickers = tickers;
        Ok(self)
    }

    pub fn n_stocks(&self) -> usize {
        self.fine_returns.len()
    }

    pub fn n_fine(&self) -> usize {
        self.fine_returns[0].len()
    }

    pub fn n_periods(&self) -> usize {
        self.n_fine() / self.subdivisions
    }

    /// Per-period (summed) returns, `N x L`.
    pub fn period_returns(&self) -> Vec<Vec<f64>> {
        self.fine_returns
            .iter()
            .map(|r| aggregate(r, self.subdivisions))
            .collect()
    }
}

/// Anything that can hand out the fine-grid returns of each stock, either from
/// memory or by regenerating them.
pub trait FineReturns: Sync {
    fn n_stocks(&self) -> usize;
    fn n_fine(&self) -> usize;
    fn subdivisions(&self) -> usize;
    fn period(&self) -> f64;
    fn tickers(&self) -> Vec<String>;
    fn stock_returns(&self, i: usize) -> Cow<'_, [f64]>;

    fn n_periods(&self) -> usize {
        self.n_fine() / self.subdivisions()
    }
}

/// The stocks `members` of another source, in that order.
pub struct FineSubset<'a> {
    inner: &'a dyn FineReturns,
    members: Vec<usize>,
}

impl<'a> FineSubset<'a> {
    pub fn new(inner: &'a dyn FineReturns, members: Vec<usize>) -> Result<Self> {
        ensure(!members.is_empty(), || "empty stock subset".into())?;
        ensure(members.iter().all(|&m| m < inner.n_stocks()), || {
            format!("subset member out of range (source has {} stocks)", inner.n_stocks())
        })?;
        Ok(Self { inner, members })
    }

    /// The first `n` stocks.
    pub fn first(inner: &'a dyn FineReturns, n: usize) -> Result<Self> {
        Self::new(inner, (0..n).collect())
    }
}

impl FineReturns for FineSubset<'_> {
    fn n_stocks(&self) -> usize {
        self.members.len()
    }

    fn n_fine(&self) -> usize {
        self.inner.n_fine()
    }

    fn subdivisions(&self) -> usize {
        self.inner.subdivisions()
    }

    fn period(&self) -> f64 {
        self.inner.period()
    }

    fn tickers(&self) -> Vec<String> {
        let all = self.inner.tickers();
        self.members.iter().map(|&m| all[m].clone()).collect()
    }

    fn stock_returns(&self, i: usize) -> Cow<'_, [f64]> {
        self.inner.stock_returns(self.members[i])
    }
}

impl FineReturns for ReturnsPanel {
    fn n_stocks(&self) -> usize {
        ReturnsPanel::n_stocks(self)
    }

    fn n_fine(&self) -> usize {
        ReturnsPanel::n_fine(self)
    }

    fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    fn period(&self) -> f64 {
        self.period
    }

    fn tickers(&self) -> Vec<String> {
        self.tickers.clone()
    }

    fn stock_returns(&self, i: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(&self.fine_returns[i])
    }
}

/// Sums of consecutive blocks of length `s`.
pub fn aggregate(x: &[f64], s: usize) -> Vec<f64> {
    x.chunks_exact(s).map(|c| c.iter().sum()).collect()
}

/// Sums of squares of consecutive blocks of length `s`.
pub fn block_sum_sq(x: &[f64], s: usize) -> Vec<f64> {
    x.chunks_exact(s).map(|c| c.iter().map(|v| v * v).sum()).collect()
}
