//! Volatility measurements: realized quadratic variation, Garman-Klass daily
//! variance, rank Gaussianization and moment-scaling Hurst identification.

mod gaussianize;
mod scaling;

pub use gaussianize::{gaussianize, GaussianizedSeries, MIN_GAUSSIANIZE_LEN};
pub use scaling::{default_scaling_lags, hurst_by_moment_scaling, MomentScalingFit, DEFAULT_Q_LIST};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::panel::{block_sum_sq, ReturnsPanel};
use crate::sim::{build_index, IndexSpec};

/// Relative floor applied before taking logs.
pub const FLOOR_RELATIVE: f64 = 1e-12;
/// Floor used when no value is positive.
pub const FLOOR_ABSOLUTE: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolKind {
    RealizedQv,
    GarmanKlass,
    Proxy,
}

/// Positive per-period variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolSeries {
    values: Vec<f64>,
    delta: f64,
    kind: VolKind,
    floor_count: usize,
    floor_value: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl VolSeries {
    /// Values below `1e-12 x median(positive values)` are raised to that floor and counted.
    pub fn new(mut values: Vec<f64>, delta: f64, kind: VolKind) -> Result<Self> {
        ensure(values.len() >= 2, || "a volatility series needs at least two periods".into())?;
        ensure(delta > 0.0, || "period length must be positive".into())?;
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite variance at period {bad}")));
        }
        let mut positive: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
        let floor_value = if positive.is_empty() {
            FLOOR_ABSOLUTE
        } else {
            FLOOR_RELATIVE * median(&mut positive)
        };
        let mut floor_count = 0;
        for v in &mut values {
            if *v < floor_value {
                *v = floor_value;
                floor_count += 1;
            }
        }
        Ok(Self {
            values,
            delta,
            kind,
            floor_count,
            floor_value,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kind(&self) -> VolKind {
        self.kind
    }

    pub fn floor_count(&self) -> usize {
        self.floor_count
    }

    pub fn floor_value(&self) -> f64 {
        self.floor_value
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }
}

/// What [`realized_qv`] measures.
#[derive(Debug, Clone, Copy)]
pub enum QvSelector<'a> {
    Stock(usize),
    Index(&'a IndexSpec),
    /// The factor increments of a synthetic panel.
    Factor,
}

/// Sum of squared fine returns per period.
pub fn realized_qv(panel: &ReturnsPanel, selector: QvSelector<'_>) -> Result<VolSeries> {
    ensure(panel.subdivisions >= 2, || "realized variance needs at least two steps per period".into())?;
    let s = panel.subdivisions;
    let values = match selector {
        QvSelector::Stock(i) => {
            let r = panel
                .fine_returns
                .get(i)
                .ok_or_else(|| Error::InvalidParameter(format!("no stock {i}")))?;
            block_sum_sq(r, s)
        }
        QvSelector::Index(idx) => block_sum_sq(&build_index(panel, idx)?.returns, s),
        QvSelector::Factor => {
            let f = panel
                .factor_returns
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("panel carries no factor returns".into()))?;
            block_sum_sq(f, s)
        }
    };
    VolSeries::new(values, panel.period, VolKind::RealizedQv)
}

/// One daily bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.open, self.high, self.low, self.close]
            .iter()
            .all(|p| *p > 0.0 && p.is_finite())
            && self.low <= self.open.min(self.close)
            && self.open.max(self.close) <= self.high;
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "invalid bar on {}: open={} high={} low={} close={}",
                self.date, self.open, self.high, self.low, self.close
            )))
        }
    }

    /// $\frac12\ln^2(H/L) - (2\ln2-1)\ln^2(C/O)$.
    pub fn garman_klass(&self) -> f64 {
        let hl = (self.high / self.low).ln();
        let co = (self.close / self.open).ln();
        0.5 * hl * hl - (2.0 * std::f64::consts::LN_2 - 1.0) * co * co
    }
}

/// Garman-Klass variance of each bar (period length one day).
pub fn garman_klass(bars: &[OhlcBar]) -> Result<VolSeries> {
    let mut values = Vec::with_capacity(bars.len());
    for b in bars {
        b.validate()?;
        values.push(b.garman_klass());
    }
    VolSeries::new(values, 1.0, VolKind::GarmanKlass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Provenance;

    fn bar(o: f64, h: f64, l: f64, c: f64) -> OhlcBar {
        OhlcBar {
            date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            open: o,
            high: h,
            low: l,
            close: c,
        }
    }

    #[test]
    fn garman_klass_examples() {
        assert_eq!(bar(1.0, 1.0, 1.0, 1.0).garman_klass(), 0.0);
        let e = std::f64::consts::E;
        assert_eq!(bar(1.0, e, 1.0, 1.0).garman_klass(), 0.5);
        let v = bar(100.0, 104.0, 98.0, 101.0).garman_klass();
        let expected = 0.5 * (104.0f64 / 98.0).ln().powi(2) - (2.0 * 2f64.ln() - 1.0) * 1.01f64.ln().powi(2);
        assert!((v - expected).abs() < 1e-18);
        assert!((v - 1.727_324_799_342e-3).abs() < 1e-15);
    }

    #[test]
    fn flat_bars_are_floored() {
        let flat = vec![bar(1.0, 1.0, 1.0, 1.0); 3];
        let s = garman_klass(&flat).unwrap();
        assert_eq!(s.floor_count(), 3);
        assert!(s.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn rejects_bad_bar_with_date() {
        let err = garman_klass(&[bar(1.0, 1.0, 1.0, 1.0), bar(1.0, 0.9, 0.8, 1.0)]).unwrap_err();
        assert!(err.to_string().contains("2020-01-02"));
    }

    #[test]
    fn realized_qv_basics() {
        let p = ReturnsPanel::new(vec![vec![1.0, -2.0, 0.0, 3.0]], 2, 1.0, Provenance::Synthetic).unwrap();
        let q = realized_qv(&p, QvSelector::Stock(0)).unwrap();
        assert_eq!(q.values(), &[5.0, 9.0]);
        let flipped = ReturnsPanel::new(vec![vec![-1.0, 2.0, 0.0, -3.0]], 2, 1.0, Provenance::Synthetic).unwrap();
        assert_eq!(realized_qv(&flipped, QvSelector::Stock(0)).unwrap().values(), q.values());
        let zero = ReturnsPanel::new(vec![vec![0.0; 4]], 2, 1.0, Provenance::Synthetic).unwrap();
        let z = realized_qv(&zero, QvSelector::Stock(0)).unwrap();
        assert_eq!(z.floor_count(), 2);
        assert!(realized_qv(&p, QvSelector::Factor).is_err());
    }

    #[test]
    fn floor_tracks_the_median() {
        let s = VolSeries::new(vec![1.0, 2.0, 3.0, -1.0, 0.0], 1.0, VolKind::Proxy).unwrap();
        assert_eq!(s.floor_count(), 2);
        assert_eq!(s.floor_value(), 2e-12);
    }
}
