//! Experiment drivers for the synthetic and empirical studies.
//!
//! Each run produces a [`Bundle`]: a JSON summary embedding the resolved
//! specification, the seed and the crate version, and plot-ready CSV series with
//! columns `x,y,y_lo,y_hi`. Runs are deterministic in `(spec, seed)`; per-replication
//! seeds are drawn from the master seed and results are collected in replication
//! order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::gmm::{fit_hurst, GmmConfig, MIN_SERIES_LEN};
use crate::io::{load_ohlc_dir, read_ohlc_file, DateRange, OhlcPanel};
use crate::panel::FineSubset;
use crate::pipeline::{log_vol_series, run_calibration, run_calibration_input, CalibrationInput, FactorSource, PipelineConfig};
use crate::sampler::stream_rng;
use crate::sim::{simulate_summary, IndexSpec, ModeConfig, ModelConfig, NestedSimulator, ParamDraw, MODEL_SCHEMA_VERSION};
use crate::theory::{H_MAX, H_MIN};
use crate::vol::{garman_klass, VolKind, VolSeries};

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;
/// Largest fine grid (periods times subdivisions) a synthetic experiment accepts.
pub const MAX_FINE_POINTS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "stocks_vs_index")]
    StocksVsIndex,
    #[serde(rename = "index_vs_factor_H")]
    IndexVsFactorH,
    #[serde(rename = "convergence_in_N")]
    ConvergenceInN,
    #[serde(rename = "idio_recovery")]
    IdioRecovery,
    #[serde(rename = "empirical_factor_vs_Ns")]
    EmpiricalFactorVsNs,
    #[serde(rename = "empirical_idio")]
    EmpiricalIdio,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::StocksVsIndex,
        ExperimentId::IndexVsFactorH,
        ExperimentId::ConvergenceInN,
        ExperimentId::IdioRecovery,
        ExperimentId::EmpiricalFactorVsNs,
        ExperimentId::EmpiricalIdio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::StocksVsIndex => "stocks_vs_index",
            ExperimentId::IndexVsFactorH => "index_vs_factor_H",
            ExperimentId::ConvergenceInN => "convergence_in_N",
            ExperimentId::IdioRecovery => "idio_recovery",
            ExperimentId::EmpiricalFactorVsNs => "empirical_factor_vs_Ns",
            ExperimentId::EmpiricalIdio => "empirical_idio",
        }
    }

    pub fn is_empirical(self) -> bool {
        matches!(self, ExperimentId::EmpiricalFactorVsNs | ExperimentId::EmpiricalIdio)
    }
}

/// Experiment document (TOML).
///
/// ```toml
/// schema_version = 1
/// id = "convergence_in_N"
/// seed = 7
///
/// [overrides]
/// n_values = [8, 32]
/// replications = 4
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub id: ExperimentId,
    #[serde(default)]
    pub seed: u64,
    /// OHLC directory of the empirical experiments.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Use the figure-caption grid sizes instead of the desk-scale ones.
    #[serde(default)]
    pub paper_scale: bool,
    #[serde(default)]
    pub overrides: toml::Table,
}

impl ExperimentSpec {
    pub fn new(id: ExperimentId, seed: u64) -> Self {
        Self {
            schema_version: EXPERIMENT_SCHEMA_VERSION,
            id,
            seed,
            data_dir: None,
            paper_scale: false,
            overrides: toml::Table::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if spec.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema_version {}", spec.schema_version)));
        }
        Ok(spec)
    }

    pub fn with_override(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.overrides.insert(key.to_string(), value.into());
        self
    }
}

/// One point of a plotted series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub x: f64,
    pub y: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub summary: serde_json::Value,
    /// File stem to rows; written as `<stem>.csv`.
    pub series: BTreeMap<String, Vec<PlotRow>>,
}

impl Bundle {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        std::fs::write(&path, text + "\n").map_err(Error::io(&path))?;
        for (name, rows) in &self.series {
            let path = dir.join(format!("{name}.csv"));
            let mut w = std::io::BufWriter::new(File::create(&path).map_err(Error::io(&path))?);
            let mut out = || -> std::io::Result<()> {
                writeln!(w, "x,y,y_lo,y_hi")?;
                for r in rows {
                    writeln!(w, "{},{},{},{}", r.x, r.y, r.y_lo, r.y_hi)?;
                }
                w.flush()
            };
            out().map_err(Error::io(&path))?;
        }
        Ok(())
    }
}

/// Runs the experiment and returns its bundle.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Bundle> {
    if spec.id.is_empirical() && spec.data_dir.is_none() {
        return Err(Error::Config(format!("experiment {} needs data_dir", spec.id.name())));
    }
    let (params, out) = match spec.id {
        ExperimentId::StocksVsIndex => run_with(spec, StocksVsIndex::defaults, stocks_vs_index)?,
        ExperimentId::IndexVsFactorH => run_with(spec, IndexVsFactorH::defaults, index_vs_factor_h)?,
        ExperimentId::ConvergenceInN => run_with(spec, ConvergenceInN::defaults, convergence_in_n)?,
        ExperimentId::IdioRecovery => run_with(spec, IdioRecovery::defaults, idio_recovery)?,
        ExperimentId::EmpiricalFactorVsNs => run_with(spec, EmpiricalFactorVsNs::defaults, empirical_factor_vs_ns)?,
        ExperimentId::EmpiricalIdio => run_with(spec, EmpiricalIdio::defaults, empirical_idio)?,
    };
    let summary = json!({
        "experiment": spec.id.name(),
        "seed": spec.seed,
        "scale": if spec.paper_scale { "paper" } else { "desk" },
        "version": env!("CARGO_PKG_VERSION"),
        "spec": spec,
        "parameters": params,
        "results": out.results,
        "warnings": out.warnings,
    });
    Ok(Bundle {
        summary,
        series: out.series,
    })
}

/// Experiment parameters: defaults per scale, a type check of the overrides and
/// the bounds a run must respect.
trait Params: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<()>;
}

struct Outcome {
    results: serde_json::Value,
    series: BTreeMap<String, Vec<PlotRow>>,
    warnings: Vec<String>,
}

fn run_with<P: Params>(
    spec: &ExperimentSpec,
    defaults: fn(bool) -> P,
    run: fn(&ExperimentSpec, &P) -> Result<Outcome>,
) -> Result<(serde_json::Value, Outcome)> {
    let params = resolve(spec, defaults(spec.paper_scale))?;
    let out = run(spec, &params)?;
    Ok((serde_json::to_value(&params).expect("params serialize"), out))
}

fn resolve<P: Params>(spec: &ExperimentSpec, defaults: P) -> Result<P> {
    let mut table = toml::Table::try_from(&defaults).expect("defaults serialize");
    for (k, v) in &spec.overrides {
        table.insert(k.clone(), v.clone());
    }
    let params: P = table
        .try_into()
        .map_err(|e| Error::Config(format!("override for {}: {e}", spec.id.name())))?;
    // keys the parameters do not know are dropped by the round trip
    let known = toml::Table::try_from(&params).expect("params serialize");
    if let Some(k) = spec.overrides.keys().find(|k| !known.contains_key(*k)) {
        return Err(Error::Config(format!(
            "unknown override `{k}` for experiment {}; known: {}",
            spec.id.name(),
            known.keys().cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    params.validate()?;
    Ok(params)
}

fn bound(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("infeasible parameters: {} violated", what())))
    }
}

/// Common grid of the synthetic experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n_periods: usize,
    pub subdivisions: usize,
    /// Horizon `T`; defaults to the span.
    pub horizon: Option<f64>,
}

impl Grid {
    fn scale(full: bool) -> Self {
        if full {
            Grid {
                n_periods: 1 << 15,
                subdivisions: 1 << 8,
                horizon: None,
            }
        } else {
            Grid {
                n_periods: 1 << 13,
                subdivisions: 1 << 6,
                horizon: None,
            }
        }
    }

    fn validate(&self) -> Result<()> {
        bound(self.n_periods >= MIN_SERIES_LEN, || {
            format!("n_periods >= {MIN_SERIES_LEN} (got {})", self.n_periods)
        })?;
        bound(self.subdivisions >= 2, || format!("subdivisions >= 2 (got {})", self.subdivisions))?;
        bound(self.n_periods.saturating_mul(self.subdivisions) <= MAX_FINE_POINTS, || {
            format!("n_periods * subdivisions <= {MAX_FINE_POINTS}")
        })?;
        if let Some(t) = self.horizon {
            bound(t > 0.0, || "horizon > 0".into())?;
        }
        Ok(())
    }
}

fn check_hurst(name: &str, h: f64) -> Result<()> {
    bound((H_MIN..=H_MAX).contains(&h), || format!("{H_MIN} <= {name} <= {H_MAX} (got {h})"))
}

struct ModelParts {
    factor_hurst: f64,
    idio_hurst: f64,
    intermittency_sq: f64,
    gamma: f64,
    beta: ParamDraw,
    sigma: ParamDraw,
}

fn model(grid: &Grid, n_stocks: usize, m: ModelParts) -> ModelConfig {
    ModelConfig {
        schema_version: MODEL_SCHEMA_VERSION,
        n_stocks,
        n_periods: grid.n_periods,
        subdivisions: grid.subdivisions,
        period: 1.0,
        horizon: grid.horizon,
        allow_span_beyond_horizon: grid.horizon.is_some_and(|t| t < grid.n_periods as f64),
        factor: ModeConfig {
            hurst: m.factor_hurst,
            intermittency_sq: m.intermittency_sq,
        },
        idiosyncratic: ModeConfig {
            hurst: m.idio_hurst,
            intermittency_sq: m.intermittency_sq,
        },
        beta: m.beta,
        sigma: m.sigma,
        gamma: ParamDraw::Constant { value: m.gamma },
    }
}

fn beta_draw(shape: (f64, f64)) -> ParamDraw {
    ParamDraw::Beta { a: shape.0, b: shape.1 }
}

/// Independent replication seeds derived from the master seed.
fn replication_seeds(master: u64, stream: u64, n: usize) -> Vec<u64> {
    let mut rng = stream_rng(master, stream);
    (0..n).map(|_| rng.random::<u64>()).collect()
}

fn quick_gmm() -> GmmConfig {
    GmmConfig {
        jackknife_blocks: 0,
        ..GmmConfig::default()
    }
}

fn fit_log_qv(qv: &[f64], gmm: &GmmConfig) -> Result<f64> {
    let v = VolSeries::new(qv.to_vec(), 1.0, VolKind::RealizedQv)?;
    Ok(fit_hurst(&log_vol_series(&v, true)?, gmm, 1.0)?.hurst)
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = if x.len() > 1 {
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean with a normal-approximation 95% interval over replications.
fn ci_row(x: f64, values: &[f64]) -> PlotRow {
    let (m, sd) = mean_sd(values);
    let half = 1.96 * sd / (values.len() as f64).sqrt();
    PlotRow {
        x,
        y: m,
        y_lo: m - half,
        y_hi: m + half,
    }
}

/// Density histogram on `[0, 0.5]` with ±1 binomial standard deviation bands.
pub fn hurst_histogram(values: &[f64], bins: usize) -> Vec<PlotRow> {
    let width = 0.5 / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = ((v / width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = values.len().max(1) as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let p = c as f64 / n;
            let sd = (p * (1.0 - p) / n).sqrt();
            PlotRow {
                x: (k as f64 + 0.5) * width,
                y: p / width,
                y_lo: (p - sd).max(0.0) / width,
                y_hi: (p + sd) / width,
            }
        })
        .collect()
}

// (a) ------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StocksVsIndex {
    #[serde(flatten)]
    pub grid: Grid,
    pub n_stocks: usize,
    pub panels: usize,
    pub factor_hurst: f64,
    pub idio_hurst: f64,
    pub intermittency_sq: f64,
    pub gamma: f64,
    pub beta_shape: (f64, f64),
    pub sigma_shape: (f64, f64),
    pub bins: usize,
}

impl StocksVsIndex {
    fn defaults(full: bool) -> Self {
        let grid = if full {
            Grid {
                n_periods: 1 << 14,
                subdivisions: 1 << 8,
                horizon: Some(4096.0),
            }
        } else {
            Grid::scale(false)
        };
        Self {
            grid,
            n_stocks: 100,
            panels: if full { 50 } else { 20 },
            factor_hurst: 0.11,
            idio_hurst: 0.01,
            intermittency_sq: 0.0025,
            gamma: 0.2,
            beta_shape: crate::sim::BETA_SHAPE,
            sigma_shape: crate::sim::SIGMA_SHAPE,
            bins: 25,
        }
    }
}

impl Params for StocksVsIndex {
    fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        bound(self.n_stocks >= 1, || "n_stocks >= 1".into())?;
        bound(self.panels >= 1, || "panels >= 1".into())?;
        bound(self.bins >= 1, || "bins >= 1".into())?;
        check_hurst("factor_hurst", self.factor_hurst)?;
        check_hurst("idio_hurst", self.idio_hurst)
    }
}

fn stocks_vs_index(spec: &ExperimentSpec, p: &StocksVsIndex) -> Result<Outcome> {
    let cfg = model(
        &p.grid,
        p.n_stocks,
        ModelParts {
            factor_hurst: p.factor_hurst,
            idio_hurst: p.idio_hurst,
            intermittency_sq: p.intermittency_sq,
            gamma: p.gamma,
            beta: beta_draw(p.beta_shape),
            sigma: beta_draw(p.sigma_shape),
        },
    );
    let index = IndexSpec::all(p.n_stocks)?;
    let gmm = quick_gmm();
    let per_panel: Vec<(Vec<f64>, f64)> = replication_seeds(spec.seed, 0, p.panels)
        .into_iter()
        .map(|seed| {
            let summary = simulate_summary(&cfg.build(seed)?, seed, std::slice::from_ref(&index))?;
            let stocks = summary
                .stock_qv
                .par_iter()
                .map(|q| fit_log_qv(q, &gmm))
                .collect::<Result<Vec<f64>>>()?;
            Ok((stocks, fit_log_qv(&summary.index_qv[0], &gmm)?))
        })
        .collect::<Result<_>>()?;
    let stocks: Vec<f64> = per_panel.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    let index_h: Vec<f64> = per_panel.iter().map(|(_, h)| *h).collect();
    let mut series = BTreeMap::new();
    series.insert("stocks_hist".to_string(), hurst_histogram(&stocks, p.bins));
    series.insert("index_hist".to_string(), hurst_histogram(&index_h, p.bins));
    Ok(Outcome {
        results: json!({
            "stocks": {"mean": mean_sd(&stocks).0, "median": median(&stocks), "sd": mean_sd(&stocks).1},
            "index": {"mean": mean_sd(&index_h).0, "median": median(&index_h), "sd": mean_sd(&index_h).1, "values": index_h},
        }),
        series,
        warnings: Vec::new(),
    })
}

// (b) ------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexVsFactorH {
    #[serde(flatten)]
    pub grid: Grid,
    pub hurst_values: Vec<f64>,
    pub n_stocks: usize,
    pub replications: usize,
    pub idio_hurst: f64,
    pub intermittency_sq: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub beta_shape: (f64, f64),
}

impl IndexVsFactorH {
    fn defaults(full: bool) -> Self {
        Self {
            grid: Grid::scale(full),
            hurst_values: if full {
                (1..=11).map(|k| 0.025 * k as f64 + 0.025).collect()
            } else {
                vec![0.05, 0.08, 0.11, 0.15, 0.2]
            },
            n_stocks: if full { 200 } else { 64 },
            replications: 20,
            idio_hurst: 0.01,
            intermittency_sq: 0.001,
            gamma: 0.01,
            sigma: 1.0,
            beta_shape: crate::sim::BETA_SHAPE,
        }
    }
}

impl Params for IndexVsFactorH {
    fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        bound(!self.hurst_values.is_empty(), || "hurst_values non-empty".into())?;
        for &h in &self.hurst_values {
            check_hurst("hurst_values", h)?;
        }
        check_hurst("idio_hurst", self.idio_hurst)?;
        bound(self.n_stocks >= 1, || "n_stocks >= 1".into())?;
        bound(self.replications >= 2, || "replications >= 2".into())
    }
}

fn index_vs_factor_h(spec: &ExperimentSpec, p: &IndexVsFactorH) -> Result<Outcome> {
    let index = IndexSpec::all(p.n_stocks)?;
    let gmm = GmmConfig::default();
    let mut rows = Vec::new();
    let mut per_h = BTreeMap::new();
    for (k, &h) in p.hurst_values.iter().enumerate() {
        let cfg = model(
            &p.grid,
            p.n_stocks,
            ModelParts {
                factor_hurst: h,
                idio_hurst: p.idio_hurst,
                intermittency_sq: p.intermittency_sq,
                gamma: p.gamma,
                beta: beta_draw(p.beta_shape),
                sigma: ParamDraw::Constant { value: p.sigma },
            },
        );
        let values = replication_seeds(spec.seed, k as u64, p.replications)
            .into_iter()
            .map(|seed| {
                let summary = simulate_summary(&cfg.build(seed)?, seed, std::slice::from_ref(&index))?;
                fit_log_qv(&summary.index_qv[0], &gmm)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(ci_row(h, &values));
        per_h.insert(format!("{h}"), values);
    }
    let mut series = BTreeMap::new();
    series.insert("index_vs_h".to_string(), rows);
    Ok(Outcome {
        results: json!({ "index_hurst": per_h }),
        series,
        warnings: Vec::new(),
    })
}

// (c) ------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceInN {
    #[serde(flatten)]
    pub grid: Grid,
    pub n_values: Vec<usize>,
    pub hurst_values: Vec<f64>,
    pub replications: usize,
    pub idio_hurst: f64,
    pub intermittency_sq: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub beta_shape: (f64, f64),
    /// Also run the calibration pipeline on each nested sub-panel.
    pub factor_fit: bool,
}

impl ConvergenceInN {
    fn defaults(full: bool) -> Self {
        Self {
            grid: Grid::scale(full),
            n_values: if full {
                vec![10, 25, 50, 100, 200, 400]
            } else {
                vec![8, 32, 128]
            },
            hurst_values: vec![0.08, 0.11],
            replications: 20,
            idio_hurst: 0.01,
            intermittency_sq: 0.001,
            gamma: 0.01,
            sigma: 1.0,
            beta_shape: crate::sim::BETA_SHAPE,
            factor_fit: true,
        }
    }
}

impl Params for ConvergenceInN {
    fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        bound(!self.n_values.is_empty(), || "n_values non-empty".into())?;
        bound(self.n_values.windows(2).all(|w| w[0] < w[1]), || "n_values strictly increasing".into())?;
        bound(self.n_values[0] >= 1, || "n_values >= 1".into())?;
        if self.factor_fit {
            bound(self.n_values[0] >= 3, || "n_values >= 3 with factor_fit".into())?;
        }
        for &h in &self.hurst_values {
            check_hurst("hurst_values", h)?;
        }
        check_hurst("idio_hurst", self.idio_hurst)?;
        bound(self.replications >= 2, || "replications >= 2".into())
    }
}

/// Index and factor Hurst estimates of one replication, per `n_values` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReplication {
    pub seed: u64,
    pub index_hurst: Vec<f64>,
    pub index_se: Vec<Option<f64>>,
    pub factor_hurst: Option<Vec<f64>>,
}

/// One replication of the convergence study: nested equal-weight indices of the
/// first `n` stocks of a single panel.
pub fn convergence_replication(p: &ConvergenceInN, hurst: f64, seed: u64) -> Result<ConvergenceReplication> {
    let n_max = *p.n_values.last().expect("validated non-empty");
    let cfg = model(
        &p.grid,
        n_max,
        ModelParts {
            factor_hurst: hurst,
            idio_hurst: p.idio_hurst,
            intermittency_sq: p.intermittency_sq,
            gamma: p.gamma,
            beta: beta_draw(p.beta_shape),
            sigma: ParamDraw::Constant { value: p.sigma },
        },
    );
    let spec = cfg.build(seed)?;
    let sim = NestedSimulator::new(&spec, seed)?;
    let indices: Vec<IndexSpec> = p
        .n_values
        .iter()
        .map(|&n| IndexSpec::equal_weight((0..n).collect()))
        .collect::<Result<_>>()?;
    let summary = sim.summary(&indices)?;
    let gmm = GmmConfig::default();
    let fits = summary
        .index_qv
        .iter()
        .map(|q| {
            let v = VolSeries::new(q.clone(), 1.0, VolKind::RealizedQv)?;
            fit_hurst(&log_vol_series(&v, true)?, &gmm, 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let factor_hurst = if p.factor_fit {
        let cfg = PipelineConfig::default();
        Some(
            p.n_values
                .iter()
                .map(|&n| Ok(run_calibration(&FineSubset::first(&sim, n)?, &cfg)?.factor_hurst()))
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };
    Ok(ConvergenceReplication {
        seed,
        index_hurst: fits.iter().map(|f| f.hurst).collect(),
        index_se: fits.iter().map(|f| f.se.map(|s| s.hurst)).collect(),
        factor_hurst,
    })
}

fn convergence_in_n(spec: &ExperimentSpec, p: &ConvergenceInN) -> Result<Outcome> {
    let mut series = BTreeMap::new();
    let mut results = BTreeMap::new();
    for (k, &h) in p.hurst_values.iter().enumerate() {
        let reps = replication_seeds(spec.seed, k as u64, p.replications)
            .into_iter()
            .map(|seed| convergence_replication(p, h, seed))
            .collect::<Result<Vec<_>>>()?;
        let column = |j: usize, factor: bool| -> Vec<f64> {
            reps.iter()
                .map(|r| if factor { r.factor_hurst.as_ref().expect("factor fits")[j] } else { r.index_hurst[j] })
                .collect()
        };
        let index_rows = p.n_values.iter().enumerate().map(|(j, &n)| ci_row(n as f64, &column(j, false))).collect();
        series.insert(format!("index_H{h}"), index_rows);
        if p.factor_fit {
            let rows = p.n_values.iter().enumerate().map(|(j, &n)| ci_row(n as f64, &column(j, true))).collect();
            series.insert(format!("factor_H{h}"), rows);
        }
        let monotone = reps
            .iter()
            .filter(|r| r.index_hurst.windows(2).all(|w| w[0] <= w[1]))
            .count();
        results.insert(format!("{h}"), json!({ "replications": reps, "index_monotone": monotone }));
    }
    Ok(Outcome {
        results: serde_json::to_value(results).expect("results serialize"),
        series,
        warnings: Vec::new(),
    })
}

// (d) ------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdioRecovery {
    #[serde(flatten)]
    pub grid: Grid,
    pub idio_hurst_values: Vec<f64>,
    pub n_stocks: usize,
    pub panels: usize,
    pub factor_hurst: f64,
    pub intermittency_sq: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub beta_shape: (f64, f64),
    pub bins: usize,
}

impl IdioRecovery {
    fn defaults(full: bool) -> Self {
        Self {
            grid: Grid::scale(full),
            idio_hurst_values: vec![0.03, 0.07],
            n_stocks: if full { 300 } else { 100 },
            panels: 1,
            factor_hurst: 0.1,
            intermittency_sq: 0.01,
            gamma: 0.1,
            sigma: 1.0,
            beta_shape: crate::sim::BETA_SHAPE,
            bins: 25,
        }
    }
}

impl Params for IdioRecovery {
    fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        for &h in &self.idio_hurst_values {
            check_hurst("idio_hurst_values", h)?;
        }
        check_hurst("factor_hurst", self.factor_hurst)?;
        bound(self.n_stocks >= 3, || "n_stocks >= 3".into())?;
        bound(self.panels >= 1, || "panels >= 1".into())?;
        bound(self.bins >= 1, || "bins >= 1".into())
    }
}

fn idio_recovery(spec: &ExperimentSpec, p: &IdioRecovery) -> Result<Outcome> {
    let mut series = BTreeMap::new();
    let mut results = BTreeMap::new();
    for (k, &hi) in p.idio_hurst_values.iter().enumerate() {
        let cfg = model(
            &p.grid,
            p.n_stocks,
            ModelParts {
                factor_hurst: p.factor_hurst,
                idio_hurst: hi,
                intermittency_sq: p.intermittency_sq,
                gamma: p.gamma,
                beta: beta_draw(p.beta_shape),
                sigma: ParamDraw::Constant { value: p.sigma },
            },
        );
        let mut values = Vec::new();
        let mut factor = Vec::new();
        for seed in replication_seeds(spec.seed, k as u64, p.panels) {
            let sim = NestedSimulator::new(&cfg.build(seed)?, seed)?;
            let report = run_calibration(&sim, &PipelineConfig::default())?;
            values.extend(report.idio_fits.iter().map(|f| f.hurst));
            factor.push(report.factor_hurst());
        }
        series.insert(format!("idio_H{hi}"), hurst_histogram(&values, p.bins));
        results.insert(
            format!("{hi}"),
            json!({"median": median(&values), "mean": mean_sd(&values).0, "sd": mean_sd(&values).1, "factor_hurst": factor}),
        );
    }
    Ok(Outcome {
        results: serde_json::to_value(results).expect("results serialize"),
        series,
        warnings: Vec::new(),
    })
}

// (e) ------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalFactorVsNs {
    pub ns_values: Vec<usize>,
    /// Random ticker combinations per `N_s`.
    pub combinations: usize,
    /// Random lag sets averaged per combination.
    pub lagset_trials: usize,
    pub start: Option<chrono::NaiveDate>,
    pub end: Option<chrono::NaiveDate>,
}

impl EmpiricalFactorVsNs {
    fn defaults(full: bool) -> Self {
        Self {
            ns_values: vec![10, 25, 50, 100],
            combinations: 20,
            lagset_trials: if full { 20 } else { 5 },
            start: None,
            end: None,
        }
    }
}

impl Params for EmpiricalFactorVsNs {
    fn validate(&self) -> Result<()> {
        bound(!self.ns_values.is_empty(), || "ns_values non-empty".into())?;
        bound(self.ns_values.iter().all(|&n| n >= 3), || "ns_values >= 3".into())?;
        bound(self.combinations >= 2, || "combinations >= 2".into())?;
        bound(self.lagset_trials >= 1, || "lagset_trials >= 1".into())
    }
}

fn load_panel(spec: &ExperimentSpec, start: Option<chrono::NaiveDate>, end: Option<chrono::NaiveDate>) -> Result<OhlcPanel> {
    let dir = spec.data_dir.as_ref().expect("checked by run_experiment");
    if !dir.is_dir() {
        return Err(Error::Data(format!("data directory {} does not exist", dir.display())));
    }
    load_ohlc_dir(dir, DateRange { start, end })
}

fn subset_input(panel: &OhlcPanel, members: &[usize]) -> Result<CalibrationInput<'static>> {
    CalibrationInput::from_periods(
        members.iter().map(|&i| panel.tickers[i].clone()).collect(),
        members.iter().map(|&i| panel.returns[i].clone()).collect(),
        members.iter().map(|&i| panel.gk[i].values().to_vec()).collect(),
        1.0,
    )
}

fn empirical_factor_vs_ns(spec: &ExperimentSpec, p: &EmpiricalFactorVsNs) -> Result<Outcome> {
    let panel = load_panel(spec, p.start, p.end)?;
    let mut warnings: Vec<String> = panel
        .excluded
        .iter()
        .map(|e| format!("excluded {} ({:.1}% of dates missing)", e.ticker, 100.0 * e.missing_fraction))
        .collect();
    let cfg = PipelineConfig {
        factor_lagset_trials: p.lagset_trials,
        ..PipelineConfig::default()
    };
    let available = panel.n_stocks();
    let mut rows = Vec::new();
    let mut results = BTreeMap::new();
    for (k, &ns) in p.ns_values.iter().enumerate() {
        let used = if ns > available {
            warnings.push(format!("N_s = {ns} requested but only {available} tickers are available; using {available}"));
            available
        } else {
            ns
        };
        let mut rng = stream_rng(spec.seed, k as u64);
        let combos: Vec<Vec<usize>> = (0..p.combinations)
            .map(|_| {
                let mut m = sample(&mut rng, available, used).into_vec();
                m.sort_unstable();
                m
            })
            .collect();
        let values = combos
            .par_iter()
            .enumerate()
            .map(|(c, members)| {
                let cfg = PipelineConfig {
                    lagset_seed: spec.seed.wrapping_add(c as u64),
                    ..cfg.clone()
                };
                Ok(run_calibration_input(&subset_input(&panel, members)?, &cfg)?.factor_hurst())
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(ci_row(used as f64, &values));
        results.insert(format!("{ns}"), json!({"n_used": used, "factor_hurst": values}));
    }
    let mut series = BTreeMap::new();
    series.insert("factor_vs_ns".to_string(), rows);
    Ok(Outcome {
        results: json!({
            "per_ns": results,
            "inner_lagset_trials": p.lagset_trials,
            "combinations": p.combinations,
            "tickers": panel.tickers,
            "n_days": panel.n_periods(),
        }),
        series,
        warnings,
    })
}

// (f) ------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalIdio {
    /// OHLC file of the index whose Garman-Klass variance sources the factor in
    /// the second mode; relative paths resolve against `data_dir`. The file is
    /// left out of the stock panel.
    pub index_file: Option<String>,
    pub bins: usize,
    pub start: Option<chrono::NaiveDate>,
    pub end: Option<chrono::NaiveDate>,
}

impl EmpiricalIdio {
    fn defaults(_paper: bool) -> Self {
        Self {
            index_file: None,
            bins: 25,
            start: None,
            end: None,
        }
    }
}

impl Params for EmpiricalIdio {
    fn validate(&self) -> Result<()> {
        bound(self.bins >= 1, || "bins >= 1".into())
    }
}

/// Garman-Klass variance of `index` on each of `dates`.
pub fn index_gk_on_dates(index: &Path, dates: &[chrono::NaiveDate]) -> Result<Vec<f64>> {
    let file = read_ohlc_file(index)?;
    let by_date: BTreeMap<_, _> = file.bars.iter().map(|b| (b.date, *b)).collect();
    let bars = dates
        .iter()
        .map(|d| {
            by_date
                .get(d)
                .copied()
                .ok_or_else(|| Error::Data(format!("index file {} has no bar on {d}", index.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(garman_klass(&bars)?.values().to_vec())
}

fn empirical_idio(spec: &ExperimentSpec, p: &EmpiricalIdio) -> Result<Outcome> {
    let dir = spec.data_dir.as_ref().expect("checked by run_experiment");
    let index_path = p.index_file.as_ref().map(|f| {
        let path = PathBuf::from(f);
        if path.is_absolute() {
            path
        } else {
            dir.join(path)
        }
    });
    let mut panel = load_panel(spec, p.start, p.end)?;
    let mut warnings: Vec<String> = Vec::new();
    if let Some(ip) = &index_path {
        let stem = ip.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if ip.parent() == Some(dir.as_path()) {
            if let Some(k) = panel.tickers.iter().position(|t| *t == stem) {
                panel.tickers.remove(k);
                panel.returns.remove(k);
                panel.gk.remove(k);
            }
        }
    }
    warnings.extend(
        panel
            .excluded
            .iter()
            .map(|e| format!("excluded {} ({:.1}% of dates missing)", e.ticker, 100.0 * e.missing_fraction)),
    );
    let input = CalibrationInput::from_ohlc(&panel)?;
    let mut series = BTreeMap::new();
    let mut results = BTreeMap::new();
    let mut modes: Vec<(&str, FactorSource)> = vec![("auto", FactorSource::Auto)];
    match &index_path {
        Some(ip) => modes.push((
            "external",
            FactorSource::External {
                values: index_gk_on_dates(ip, &panel.dates)?,
            },
        )),
        None => warnings.push("no index_file given; the index-sourced factor mode is skipped".into()),
    }
    for (name, source) in modes {
        let cfg = PipelineConfig {
            factor_source: source,
            ..PipelineConfig::default()
        };
        let report = run_calibration_input(&input, &cfg)?;
        let h: Vec<f64> = report.idio_fits.iter().map(|f| f.hurst).collect();
        series.insert(format!("idio_{name}"), hurst_histogram(&h, p.bins));
        results.insert(
            name.to_string(),
            json!({
                "factor_hurst": report.factor_hurst(),
                "idio_median": median(&h),
                "idio_hurst": h,
                "gamma": report.gamma_hat,
            }),
        );
    }
    Ok(Outcome {
        results: json!({ "modes": results, "tickers": panel.tickers, "n_days": panel.n_periods() }),
        series,
        warnings,
    })
}
