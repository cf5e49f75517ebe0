//! GMM calibration of $(H,\lambda^2)$ for one log-volatility mode.
//!
//! The empirical autocovariance of a log-QV series at a dyadic-fractional lag
//! set is matched to $\lambda^2 K_H(\tau)$, where $K_H$ is the integrated-window
//! autocovariance $C_\Upsilon(\Delta,\tau)$ with $T$ fixed to the sample span. $\lambda^2$
//! enters linearly and is profiled out, so the search runs over $H$ only: a
//! uniform grid scan followed by golden-section refinement.
//!
//! With `mean_correction` (the default) $K_H$ is the *expected* value of the
//! biased, mean-removed estimator rather than $C_\Upsilon$ itself. Mean removal
//! shifts the sample autocovariance of a long-memory series down by roughly the
//! variance of the sample mean, which for $T$ equal to the span is of the same
//! order as the lag structure and biases $\hat H$ upwards when ignored.
//!
//! The random part of that shift is nearly common to all lags, so the default
//! fit also carries a free constant (`free_level`). This cuts the spread of
//! $\hat H$ about threefold on rough series spanning their own horizon.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::sampler::stream_rng;
use crate::theory::{c_upsilon_h, d_excess, H_MAX, H_MIN};

pub const DEFAULT_Q: u32 = 24;
pub const MIN_Q: u32 = 8;
pub const MIN_SERIES_LEN: usize = 256;
/// The nugget term covers lags `0..=NUGGET_MAX_LAG`.
pub const NUGGET_MAX_LAG: usize = 2;
pub const DEFAULT_JACKKNIFE_BLOCKS: usize = 20;
pub const DEFAULT_Q_RANGE: (u32, u32) = (28, 40);
pub const MIN_SUCCESSFUL_TRIALS: usize = 5;

const GRID_POINTS: usize = 50;
const GOLDEN_TOL: f64 = 1e-7;
const BOUND_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    /// Lags are `floor(2^{k/4})` for `k = 0..=q`.
    pub q: u32,
    pub nugget: bool,
    pub h_lower: f64,
    pub h_upper: f64,
    /// Number of delete-one jackknife blocks; 0 disables the jackknife.
    pub jackknife_blocks: usize,
    pub mean_correction: bool,
    /// Adds a free constant to the model, absorbing the random offset that the
    /// sample-mean fluctuation puts on every lag.
    pub free_level: bool,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            q: DEFAULT_Q,
            nugget: false,
            h_lower: H_MIN,
            h_upper: H_MAX,
            jackknife_blocks: DEFAULT_JACKKNIFE_BLOCKS,
            mean_correction: true,
            free_level: true,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.q >= MIN_Q, || format!("lag exponent count q must be at least {MIN_Q}"))?;
        ensure(
            H_MIN <= self.h_lower && self.h_lower < self.h_upper && self.h_upper <= H_MAX,
            || format!("H search bounds must satisfy {H_MIN} <= lower < upper <= {H_MAX}"),
        )?;
        ensure(self.jackknife_blocks == 0 || self.jackknife_blocks >= 2, || {
            "jackknife needs at least two blocks".into()
        })
    }
}

/// `floor(2^{k/4})` for `k = 0..=q`, de-duplicated and kept below `n/4`;
/// lag 0 is prepended in nugget mode.
pub fn lag_set(q: u32, n: usize, nugget: bool) -> Vec<usize> {
    let mut lags: Vec<usize> = if nugget { vec![0] } else { Vec::new() };
    for k in 0..=q {
        let l = 2f64.powf(k as f64 / 4.0).floor() as usize;
        if 4 * l < n && lags.last() != Some(&l) {
            lags.push(l);
        }
    }
    lags
}

/// Biased autocovariance $\frac1n\sum_t (y_t-\bar y)(y_{t+\tau}-\bar y)$.
pub fn empirical_autocov(series: &[f64], lags: &[usize]) -> Result<Vec<f64>> {
    let n = series.len();
    ensure(n >= 2, || "series too short".into())?;
    if let Some(&bad) = lags.iter().find(|&&l| 2 * l >= n) {
        return Err(Error::InvalidParameter(format!("lag {bad} is not below n/2 = {}", n / 2)));
    }
    // differences to the first value make a constant shift cancel before the mean
    let pivot = series[0];
    let mean = series.iter().map(|y| y - pivot).sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|y| (y - pivot) - mean).collect();
    Ok(lags
        .iter()
        .map(|&l| {
            centered[l..]
                .iter()
                .zip(&centered)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Model autocovariance per unit $\lambda^2$ for a series of `n` periods with
/// $\Delta = 1$ and $T = n$.
///
/// Without mean correction this is $C_\Upsilon(1,\tau)$. With it, the expected
/// biased estimator. Writing the covariance as $c - \kappa S(|t-u|)$ with
/// $S(k) = f(k+1) - 2f(k) + f(|k-1|)$, the constant and the quadratic part of
/// $f(x) = x^p/(p(p-1))$ drop out under mean removal, leaving
/// $g(x) = x^2\,\mathrm{expm1}(2H\ln x)/(p(p-1))$, whose partial sums telescope:
/// $$ n\,\mathbb E\hat C(\tau) = -\kappa\Big[(n-\tau)S_g(\tau) - \frac{2\tau g(n)}{n^2} - \frac{2(g(n-\tau) - g(\tau))}{n}\Big]. $$
pub fn model_autocov(hurst: f64, n: usize, lags: &[usize], mean_correction: bool) -> Vec<f64> {
    let h = hurst;
    let nf = n as f64;
    if !mean_correction {
        return lags.iter().map(|&l| c_upsilon_h(h, nf, 1.0, l as f64)).collect();
    }
    let pp = 2.0 * (1.0 + h) * (1.0 + 2.0 * h);
    let g = |x: f64| {
        if x == 0.0 {
            0.0
        } else {
            x * x * (2.0 * h * x.ln()).exp_m1() / pp
        }
    };
    let s_g = |tau: f64| {
        if tau == 0.0 {
            0.0
        } else {
            (tau.powf(2.0 * h) * d_excess(h, 1.0 / tau) + pp * (2.0 * h * tau.ln()).exp_m1() + h * (6.0 + 4.0 * h)) / pp
        }
    };
    let kappa = (-2.0 * h * nf.ln()).exp() / (2.0 * h * (1.0 - 2.0 * h));
    let gn = g(nf);
    lags.iter()
        .map(|&l| {
            let tau = l as f64;
            let ne = (nf - tau) * s_g(tau) - 2.0 * tau * gn / (nf * nf) - 2.0 * (g(nf - tau) - g(tau)) / nf;
            -kappa * ne / nf
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    AtLowerBound,
    AtUpperBound,
    NonIdentifiable,
    LambdaClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSe {
    pub hurst: f64,
    pub lambda_sq: f64,
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstFit {
    pub hurst: f64,
    pub lambda_sq: f64,
    /// Fitted constant at lags `<= NUGGET_MAX_LAG`, in nugget mode.
    pub nugget: Option<f64>,
    /// Fitted constant, with `free_level`.
    pub level: Option<f64>,
    pub objective: f64,
    pub lags: Vec<usize>,
    pub se: Option<FitSe>,
    pub flags: Vec<FitFlag>,
    pub n: usize,
    pub delta: f64,
}

impl HurstFit {
    pub fn has_flag(&self, flag: FitFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

struct Profile {
    objective: f64,
    lambda_sq: f64,
    nugget: f64,
    level: f64,
    clamped: bool,
}

/// Least squares of `y` on `cols`, with the coefficients flagged in `nonneg`
/// kept non-negative, by enumerating active sets (at most three columns).
fn small_nnls(y: &[f64], cols: &[Vec<f64>], nonneg: &[bool]) -> (Vec<f64>, f64) {
    let k = cols.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let sse = |coef: &[f64]| -> f64 {
        y.iter()
            .enumerate()
            .map(|(t, v)| {
                let fit: f64 = cols.iter().zip(coef).map(|(c, b)| b * c[t]).sum();
                (v - fit).powi(2)
            })
            .sum()
    };
    let mut best = (vec![0.0; k], sse(&vec![0.0; k]));
    for mask in 1u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let m = active.len();
        let a = nalgebra::DMatrix::from_fn(m, m, |r, c| dot(&cols[active[r]], &cols[active[c]]));
        let b = nalgebra::DVector::from_fn(m, |r, _| dot(&cols[active[r]], y));
        let Some(sol) = a.lu().solve(&b) else {
            continue;
        };
        if active.iter().zip(sol.iter()).any(|(&i, &v)| nonneg[i] && v < 0.0 || !v.is_finite()) {
            continue;
        }
        let mut coef = vec![0.0; k];
        for (&i, &v) in active.iter().zip(sol.iter()) {
            coef[i] = v;
        }
        let obj = sse(&coef);
        if obj < best.1 {
            best = (coef, obj);
        }
    }
    best
}

fn profile(acov: &[f64], lags: &[usize], n: usize, h: f64, cfg: &GmmConfig) -> Profile {
    let m = model_autocov(h, n, lags, cfg.mean_correction);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let clamped = dot(acov, &m) < 0.0;
    if !cfg.nugget && !cfg.free_level {
        let lam = (dot(acov, &m) / dot(&m, &m)).max(0.0);
        let objective = acov.iter().zip(&m).map(|(c, m)| (c - lam * m).powi(2)).sum();
        return Profile {
            objective,
            lambda_sq: lam,
            nugget: 0.0,
            level: 0.0,
            clamped,
        };
    }
    let mut cols = vec![m];
    let mut nonneg = vec![true];
    if cfg.nugget {
        cols.push(lags.iter().map(|&l| if l <= NUGGET_MAX_LAG { 1.0 } else { 0.0 }).collect());
        nonneg.push(true);
    }
    if cfg.free_level {
        cols.push(vec![1.0; lags.len()]);
        nonneg.push(false);
    }
    let (coef, objective) = small_nnls(acov, &cols, &nonneg);
    Profile {
        objective,
        lambda_sq: coef[0],
        nugget: if cfg.nugget { coef[1] } else { 0.0 },
        level: if cfg.free_level { *coef.last().expect("level column") } else { 0.0 },
        clamped: coef[0] == 0.0,
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Fits an autocovariance vector measured on a series of `n` periods.
pub fn fit_autocov(acov: &[f64], lags: &[usize], n: usize, cfg: &GmmConfig) -> Result<HurstFit> {
    cfg.validate()?;
    ensure(acov.len() == lags.len(), || "autocovariance and lag lists differ in length".into())?;
    let n_params = 2 + cfg.nugget as usize + cfg.free_level as usize;
    ensure(lags.len() > n_params, || {
        format!("{} lags are too few for the fit", lags.len())
    })?;
    let (lo, hi) = (cfg.h_lower, cfg.h_upper);
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let objectives: Vec<f64> = grid
        .iter()
        .map(|&h| profile(acov, lags, n, h, cfg).objective)
        .collect();
    if let Some(i) = objectives.iter().position(|o| !o.is_finite()) {
        return Err(Error::Numerical(format!("non-finite objective at H = {}", grid[i])));
    }
    let (ibest, _) = objectives
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    let a = grid[ibest.saturating_sub(1)];
    let b = grid[(ibest + 1).min(GRID_POINTS - 1)];
    let (mut h, mut obj) = golden_section(|h| profile(acov, lags, n, h, cfg).objective, a, b);
    if objectives[ibest] < obj {
        h = grid[ibest];
        obj = objectives[ibest];
    }
    let best = profile(acov, lags, n, h, cfg);
    let mut flags = Vec::new();
    if h <= lo + BOUND_TOL {
        flags.push(FitFlag::AtLowerBound);
    }
    if h >= hi - BOUND_TOL {
        flags.push(FitFlag::AtUpperBound);
    }
    let (omin, omax) = objectives
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &o| (a.min(o), b.max(o)));
    if omax - omin <= 1e-10 * omax {
        flags.push(FitFlag::NonIdentifiable);
    }
    if best.clamped {
        flags.push(FitFlag::LambdaClamped);
    }
    Ok(HurstFit {
        hurst: h,
        lambda_sq: best.lambda_sq,
        nugget: cfg.nugget.then_some(best.nugget),
        level: cfg.free_level.then_some(best.level),
        objective: obj,
        lags: lags.to_vec(),
        se: None,
        flags,
        n,
        delta: 1.0,
    })
}

fn check_series(series: &[f64]) -> Result<()> {
    ensure(series.len() >= MIN_SERIES_LEN, || {
        format!("series length {} is below {MIN_SERIES_LEN}", series.len())
    })?;
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at position {i}")));
    }
    let first = series[0];
    if series.iter().all(|&v| v == first) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    Ok(())
}

/// Fits $(H,\lambda^2)$ to a log-QV series (pre-standardization scale) with
/// period length `delta`. $T$ is the sample span; jackknife errors come from
/// delete-one contiguous blocks, each replicate being the remaining blocks
/// concatenated.
pub fn fit_hurst(series: &[f64], cfg: &GmmConfig, delta: f64) -> Result<HurstFit> {
    cfg.validate()?;
    check_series(series)?;
    ensure(delta > 0.0, || "period length must be positive".into())?;
    let n = series.len();
    let lags = lag_set(cfg.q, n, cfg.nugget);
    let acov = empirical_autocov(series, &lags)?;
    let mut fit = fit_autocov(&acov, &lags, n, cfg)?;
    fit.delta = delta;
    let blocks = cfg.jackknife_blocks;
    if blocks >= 2 {
        let bounds: Vec<usize> = (0..=blocks).map(|j| j * n / blocks).collect();
        let reps: Vec<(f64, f64)> = (0..blocks)
            .into_par_iter()
            .map(|j| {
                let mut rep = Vec::with_capacity(n);
                rep.extend_from_slice(&series[..bounds[j]]);
                rep.extend_from_slice(&series[bounds[j + 1]..]);
                let acov = empirical_autocov(&rep, &lags)?;
                let f = fit_autocov(&acov, &lags, rep.len(), cfg)?;
                Ok((f.hurst, f.lambda_sq))
            })
            .collect::<Result<_>>()?;
        let jk_se = |xs: Vec<f64>| {
            let b = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / b;
            ((b - 1.0) / b * xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
        };
        fit.se = Some(FitSe {
            hurst: jk_se(reps.iter().map(|r| r.0).collect()),
            lambda_sq: jk_se(reps.iter().map(|r| r.1).collect()),
            blocks,
        });
    }
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagsetTrial {
    pub q: u32,
    pub hurst: f64,
    pub lambda_sq: f64,
}

/// Mean and normal-approximation 95% interval of $\hat H$ over random lag sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLagsetFit {
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_lambda_sq: f64,
    pub trials: Vec<LagsetTrial>,
    pub failures: usize,
    pub seed: u64,
}

impl MultiLagsetFit {
    pub fn covers(&self, h: f64) -> bool {
        self.ci_lo <= h && h <= self.ci_hi
    }
}

/// Repeats [`fit_hurst`] with `q` drawn uniformly from `q_range` (inclusive),
/// jackknife off. Needs at least [`MIN_SUCCESSFUL_TRIALS`] successful fits.
pub fn fit_hurst_multi_lagset(
    series: &[f64],
    cfg: &GmmConfig,
    delta: f64,
    q_range: (u32, u32),
    n_trials: usize,
    seed: u64,
) -> Result<MultiLagsetFit> {
    ensure(q_range.0 >= MIN_Q && q_range.0 <= q_range.1, || "invalid q range".into())?;
    let mut rng = stream_rng(seed, 0);
    let qs: Vec<u32> = (0..n_trials).map(|_| rng.random_range(q_range.0..=q_range.1)).collect();
    let results: Vec<Result<HurstFit>> = qs
        .par_iter()
        .map(|&q| {
            let trial_cfg = GmmConfig {
                q,
                jackknife_blocks: 0,
                ..cfg.clone()
            };
            fit_hurst(series, &trial_cfg, delta)
        })
        .collect();
    let mut trials = Vec::new();
    let mut last_err = None;
    for (q, r) in qs.iter().zip(results) {
        match r {
            Ok(f) => trials.push(LagsetTrial {
                q: *q,
                hurst: f.hurst,
                lambda_sq: f.lambda_sq,
            }),
            Err(e) => last_err = Some(e),
        }
    }
    let failures = n_trials - trials.len();
    if trials.len() < MIN_SUCCESSFUL_TRIALS {
        return Err(last_err.unwrap_or_else(|| {
            Error::InvalidParameter(format!("need at least {MIN_SUCCESSFUL_TRIALS} trials"))
        }));
    }
    let k = trials.len() as f64;
    let mean = trials.iter().map(|t| t.hurst).sum::<f64>() / k;
    let sd = (trials.iter().map(|t| (t.hurst - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let half = 1.96 * sd / k.sqrt();
    Ok(MultiLagsetFit {
        mean,
        sd,
        ci_lo: mean - half,
        ci_hi: mean + half,
        mean_lambda_sq: trials.iter().map(|t| t.lambda_sq).sum::<f64>() / k,
        trials,
        failures,
        seed,
    })
}
