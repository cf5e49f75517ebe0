use std::borrow::Cow;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{IndexSpec, NestedModelSpec, Provenance};
use crate::error::Result;
use crate::panel::{aggregate, block_sum_sq, FineReturns, ReturnsPanel};
use crate::sampler::{stream_rng, CirculantSampler, GridSpec};
use crate::theory::SfbmParams;

const STREAM_FACTOR_VOL: u64 = 0;
const STREAM_FACTOR_NOISE: u64 = 1;

fn stream_idio_vol(i: usize) -> u64 {
    2 + 2 * i as u64
}

fn stream_idio_noise(i: usize) -> u64 {
    3 + 2 * i as u64
}

/// Fine-grid paths of one stock.
#[derive(Debug, Clone)]
pub struct StockPath {
    /// $\tilde\omega^i$ at the left end of every fine step.
    pub log_vol: Vec<f64>,
    pub residual_returns: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Ground truth that is only available for synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    /// Realized quadratic variation of the factor per period.
    pub factor_qv: Vec<f64>,
    pub factor_period_returns: Vec<f64>,
    /// Realized quadratic variation of each residual per period.
    pub residual_qv: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: ReturnsPanel,
    pub truth: PanelTruth,
}

/// Per-period aggregates of a simulated panel, produced without holding the fine
/// grid of every stock in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub period: f64,
    pub subdivisions: usize,
    pub betas: Vec<f64>,
    pub period_returns: Vec<Vec<f64>>,
    pub stock_qv: Vec<Vec<f64>>,
    pub truth: PanelTruth,
    pub indices: Vec<IndexSpec>,
    pub index_qv: Vec<Vec<f64>>,
    pub index_period_returns: Vec<Vec<f64>>,
}

/// Draws the shared factor once and then any stock on demand.
///
/// Random streams of master seed `seed`: 0 factor log-volatility, 1 factor noise,
/// `2 + 2i` log-volatility of stock `i`, `3 + 2i` residual noise of stock `i`.
pub struct NestedSimulator {
    spec: NestedModelSpec,
    seed: u64,
    factor_centered: Vec<f64>,
    factor_returns: Vec<f64>,
    samplers: Vec<(SfbmParams, CirculantSampler)>,
}

impl NestedSimulator {
    pub fn new(spec: &NestedModelSpec, seed: u64) -> Result<Self> {
        let n = spec.n_fine();
        let dt = spec.dt();
        // one extra point makes the embedding size a power of two for dyadic grids
        let grid = GridSpec::new(n + 1, dt)?;
        let factor_sampler = CirculantSampler::new(spec.factor_mode(), &grid)?;
        let mut buf = vec![0.0; n + 1];
        factor_sampler.sample_centered_into(&mut stream_rng(seed, STREAM_FACTOR_VOL), &mut buf);
        buf.truncate(n);
        let mean = spec.factor_mode().mean();
        let sq_dt = dt.sqrt();
        let mut noise = stream_rng(seed, STREAM_FACTOR_NOISE);
        let factor_returns = buf
            .iter()
            .map(|w| {
                let z: f64 = noise.sample(StandardNormal);
                ((w + mean) / 2.0).exp() * sq_dt * z
            })
            .collect();

        let mut samplers: Vec<(SfbmParams, CirculantSampler)> = Vec::new();
        for m in spec.idio_modes() {
            if !samplers.iter().any(|(p, _)| p == m) {
                samplers.push((*m, CirculantSampler::new(m, &grid)?));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            seed,
            factor_centered: buf,
            factor_returns,
            samplers,
        })
    }

    pub fn spec(&self) -> &NestedModelSpec {
        &self.spec
    }

    /// $\Omega$ on the fine grid.
    pub fn factor_log_vol(&self) -> Vec<f64> {
        let mean = self.spec.factor_mode().mean();
        self.factor_centered.iter().map(|w| w + mean).collect()
    }

    pub fn factor_returns(&self) -> &[f64] {
        &self.factor_returns
    }

    pub fn stock(&self, i: usize) -> StockPath {
        let spec = &self.spec;
        let n = spec.n_fine();
        let mode = &spec.idio_modes()[i];
        let sampler = &self
            .samplers
            .iter()
            .find(|(p, _)| p == mode)
            .expect("sampler cached for every mode")
            .1;
        let mut idio = vec![0.0; n + 1];
        sampler.sample_centered_into(&mut stream_rng(self.seed, stream_idio_vol(i)), &mut idio);
        let shift = spec.residual_mean_shift(i);
        let (beta, sigma, gamma) = (spec.betas()[i], spec.sigmas()[i], spec.gammas()[i]);
        let scale = sigma * spec.dt().sqrt();
        let mut noise = stream_rng(self.seed, stream_idio_noise(i));
        let mut log_vol = Vec::with_capacity(n);
        let mut residual_returns = Vec::with_capacity(n);
        let mut returns = Vec::with_capacity(n);
        for k in 0..n {
            let lv = gamma * self.factor_centered[k] + idio[k] + shift;
            let z: f64 = noise.sample(StandardNormal);
            let e = scale * (lv / 2.0).exp() * z;
            log_vol.push(lv);
            residual_returns.push(e);
            returns.push(beta * self.factor_returns[k] + e);
        }
        StockPath {
            log_vol,
            residual_returns,
            returns,
        }
    }

    fn factor_truth(&self) -> (Vec<f64>, Vec<f64>) {
        let s = self.spec.subdivisions();
        (
            block_sum_sq(&self.factor_returns, s),
            aggregate(&self.factor_returns, s),
        )
    }

    /// Full fine-grid panel.
    pub fn panel(&self) -> Result<SimulatedPanel> {
        let s = self.spec.subdivisions();
        let stocks: Vec<StockPath> = (0..self.spec.n_stocks())
            .into_par_iter()
            .map(|i| self.stock(i))
            .collect();
        let (factor_qv, factor_period_returns) = self.factor_truth();
        let residual_qv = stocks.iter().map(|p| block_sum_sq(&p.residual_returns, s)).collect();
        let panel = ReturnsPanel::new(
            stocks.into_iter().map(|p| p.returns).collect(),
            s,
            self.spec.period(),
            Provenance::Synthetic,
        )?
        .with_betas(self.spec.betas().to_vec())?
        .with_factor_returns(self.factor_returns.clone())?;
        Ok(SimulatedPanel {
            panel,
            truth: PanelTruth {
                factor_qv,
                factor_period_returns,
                residual_qv,
            },
        })
    }

    /// Per-period aggregates plus realized variances of the requested indices.
    ///
    /// Stocks are generated in parallel chunks but folded into the index sums in
    /// stock order, so the result does not depend on the thread count.
    pub fn summary(&self, indices: &[IndexSpec]) -> Result<PanelSummary> {
        let n_stocks = self.spec.n_stocks();
        for idx in indices {
            idx.check_range(n_stocks)?;
        }
        let s = self.spec.subdivisions();
        let n = self.spec.n_fine();
        // weight of stock i in each index
        let mut weight = vec![vec![0.0; n_stocks]; indices.len()];
        for (w, idx) in weight.iter_mut().zip(indices) {
            for (&m, &v) in idx.members().iter().zip(idx.weights()) {
                w[m] = v;
            }
        }
        let mut index_returns = vec![vec![0.0; n]; indices.len()];
        let mut period_returns = Vec::with_capacity(n_stocks);
        let mut stock_qv = Vec::with_capacity(n_stocks);
        let mut residual_qv = Vec::with_capacity(n_stocks);
        let chunk = rayon::current_num_threads().max(1) * 2;
        for start in (0..n_stocks).step_by(chunk) {
            let end = (start + chunk).min(n_stocks);
            let paths: Vec<StockPath> = (start..end).into_par_iter().map(|i| self.stock(i)).collect();
            for (offset, p) in paths.into_iter().enumerate() {
                let i = start + offset;
                for (acc, w) in index_returns.iter_mut().zip(&weight) {
                    if w[i] != 0.0 {
                        for (a, x) in acc.iter_mut().zip(&p.returns) {
                            *a += w[i] * x;
                        }
                    }
                }
                period_returns.push(aggregate(&p.returns, s));
                stock_qv.push(block_sum_sq(&p.returns, s));
                residual_qv.push(block_sum_sq(&p.residual_returns, s));
            }
        }
        let (factor_qv, factor_period_returns) = self.factor_truth();
        Ok(PanelSummary {
            period: self.spec.period(),
            subdivisions: s,
            betas: self.spec.betas().to_vec(),
            period_returns,
            stock_qv,
            truth: PanelTruth {
                factor_qv,
                factor_period_returns,
                residual_qv,
            },
            indices: indices.to_vec(),
            index_qv: index_returns.iter().map(|r| block_sum_sq(r, s)).collect(),
            index_period_returns: index_returns.iter().map(|r| aggregate(r, s)).collect(),
        })
    }
}

impl FineReturns for NestedSimulator {
    fn n_stocks(&self) -> usize {
        self.spec.n_stocks()
    }

    fn n_fine(&self) -> usize {
        self.spec.n_fine()
    }

    fn subdivisions(&self) -> usize {
        self.spec.subdivisions()
    }

    fn period(&self) -> f64 {
        self.spec.period()
    }

    fn tickers(&self) -> Vec<String> {
        (1..=self.spec.n_stocks()).map(|i| format!("x_{i}")).collect()
    }

    fn stock_returns(&self, i: usize) -> Cow<'_, [f64]> {
        Cow::Owned(self.stock(i).returns)
    }
}

/// Fine-grid panel drawn from `spec` with master seed `seed`.
pub fn simulate_panel(spec: &NestedModelSpec, seed: u64) -> Result<SimulatedPanel> {
    NestedSimulator::new(spec, seed)?.panel()
}

/// Period aggregates and index variances drawn from `spec` with master seed `seed`;
/// identical in distribution and in values to aggregating [`simulate_panel`].
pub fn simulate_summary(spec: &NestedModelSpec, seed: u64, indices: &[IndexSpec]) -> Result<PanelSummary> {
    NestedSimulator::new(spec, seed)?.summary(indices)
}
