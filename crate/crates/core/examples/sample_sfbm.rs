//! Exact circulant-embedding draws of one S-fBM mode, checked against the model
//! covariance.

use nested_sfbm::sampler::{sample_many, GridSpec};
use nested_sfbm::theory::SfbmParams;

fn main() -> nested_sfbm::error::Result<()> {
    let mode = SfbmParams::new(0.1, 0.02, 1024.0)?;
    let grid = GridSpec::new(4096, 0.25)?;
    let paths = sample_many(&vec![mode; 200], &grid, 7)?;

    println!("lag  empirical  model");
    for lag in [0usize, 1, 4, 16, 64, 256] {
        let mut acc = 0.0;
        let mut n = 0.0;
        for p in &paths {
            for t in (0..p.values.len() - lag).step_by(16) {
                acc += (p.values[t] - mode.mean()) * (p.values[t + lag] - mode.mean());
                n += 1.0;
            }
        }
        println!("{lag:>4}  {:>9.5}  {:.5}", acc / n, mode.covariance(lag as f64 * grid.dt()));
    }
    Ok(())
}
