//! Volatility proxies: realized variance, Garman-Klass bars, Gaussianization and
//! the moment-scaling Hurst estimator.

use chrono::NaiveDate;
use nested_sfbm::io::bars_from_fine_returns;
use nested_sfbm::sim::{ModelConfig, NestedSimulator};
use nested_sfbm::vol::{garman_klass, gaussianize, hurst_by_moment_scaling, realized_qv, QvSelector};

fn main() -> nested_sfbm::error::Result<()> {
    let cfg = ModelConfig::from_toml(include_str!("../configs/model_small.toml"))?;
    let spec = cfg.build(3)?;
    let panel = NestedSimulator::new(&spec, 3)?.panel()?.panel;

    let rv = realized_qv(&panel, QvSelector::Stock(0))?;
    let start = NaiveDate::from_ymd_opt(2001, 1, 1).expect("date");
    let bars = bars_from_fine_returns(&panel.fine_returns[0], spec.subdivisions(), 100.0, start)?;
    let gk = garman_klass(&bars)?;
    let corr = correlation(&rv.log_values(), &gk.log_values());
    println!("stock 0: {} periods, corr(log RV, log GK) = {corr:.3}", rv.len());

    let g = gaussianize(&rv.log_values())?;
    let scaling = hurst_by_moment_scaling(g.values(), &[], &[])?;
    println!("moment-scaling H of the Gaussianized log RV: {:.3}", scaling.hurst);
    for (q, slope) in &scaling.slopes {
        println!("  q = {q}: slope {slope:.4}");
    }
    Ok(())
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
