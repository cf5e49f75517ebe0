//! Closed-form kernels of the log S-fBM measure and the regime check of a model.

use nested_sfbm::sim::ModelConfig;
use nested_sfbm::theory::{c_upsilon, check_regime, g_h, g_tilde_h, small_intermittency_v, small_intermittency_w, SfbmParams};

fn main() -> nested_sfbm::error::Result<()> {
    for h in [0.01, 0.1, 0.25, 0.4] {
        println!("H = {h:<5} g_H(1) = {:.6}  g~_H(1) = {:.6}", g_h(h, 1.0), g_tilde_h(h, 1.0));
    }

    let factor = SfbmParams::new(0.11, 0.0025, 4096.0)?;
    println!("\nautocovariance of log M_1 for H = 0.11, T = 4096:");
    for tau in [1.0, 4.0, 16.0, 64.0, 256.0] {
        println!("  tau = {tau:>5}  C = {:.6}", c_upsilon(&factor, 1.0, tau));
    }

    let idio = SfbmParams::new(0.01, 0.0025, 4096.0)?;
    let modes = [(0.8, factor), (1.0, idio)];
    println!(
        "\nsmall-intermittency variances at tau = 16: W = {:.3e}  V = {:.3e}",
        small_intermittency_w(&modes, 16.0, 1.0)?,
        small_intermittency_v(&modes, 16.0, 1.0)?
    );

    let cfg = ModelConfig::from_toml(include_str!("../configs/model_desk.toml"))?;
    let report = check_regime(&cfg.build(0)?, 16.0, 1.0)?;
    println!(
        "\nregime at tau = 16: gamma {}  beta {}  sub-index {} (lhs {:.1} vs {})",
        report.gamma_satisfied, report.beta_satisfied, report.subindex_satisfied, report.subindex_lhs, report.subindex_threshold
    );
    Ok(())
}
