//! A reduced convergence-in-N study written as a plot-ready bundle.

use nested_sfbm::experiments::{run_experiment, ExperimentId, ExperimentSpec};

fn main() -> nested_sfbm::error::Result<()> {
    let spec = ExperimentSpec::new(ExperimentId::ConvergenceInN, 1)
        .with_override("n_periods", 4096)
        .with_override("subdivisions", 64)
        .with_override("intermittency_sq", 0.02)
        .with_override("replications", 4)
        .with_override("factor_fit", false)
        .with_override("n_values", toml::Value::Array(vec![4.into(), 16.into(), 64.into()]));
    let bundle = run_experiment(&spec)?;
    let out = std::env::temp_dir().join("nested_sfbm_experiment_example");
    bundle.write(&out)?;
    for (name, rows) in &bundle.series {
        println!("{name}");
        for r in rows {
            println!("  N = {:>3}  H_index = {:.3}  [{:.3}, {:.3}]", r.x, r.y, r.y_lo, r.y_hi);
        }
    }
    println!("bundle written to {}", out.display());
    Ok(())
}
