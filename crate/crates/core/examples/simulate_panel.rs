//! Nested factor panel: stock, index and factor realized variances of one draw.

use nested_sfbm::sim::{simulate_summary, IndexSpec, ModelConfig};

fn main() -> nested_sfbm::error::Result<()> {
    let cfg = ModelConfig::from_toml(include_str!("../configs/model_small.toml"))?;
    let spec = cfg.build(42)?;
    let index = IndexSpec::all(spec.n_stocks())?;
    let s = simulate_summary(&spec, 42, &[index])?;

    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    println!("{} stocks, {} periods of {} steps", spec.n_stocks(), spec.n_periods(), spec.subdivisions());
    println!("mean factor QV      {:.4}", mean(&s.truth.factor_qv));
    println!("mean index QV       {:.4}", mean(&s.index_qv[0]));
    for i in 0..3 {
        println!(
            "stock {i}: beta {:.3}  sigma {:.3}  mean QV {:.4}  mean residual QV {:.4}",
            spec.betas()[i],
            spec.sigmas()[i],
            mean(&s.stock_qv[i]),
            mean(&s.truth.residual_qv[i])
        );
    }
    Ok(())
}
