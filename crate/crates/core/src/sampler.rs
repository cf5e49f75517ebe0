//! Exact sampling of S-fBM paths on a uniform grid.
//!
//! The covariance sequence $r_k = \operatorname{Cov}(\omega_0,\omega_{k\,dt})$, $k<n$, is
//! embedded in a circulant matrix of size $m = 2(n-1)$ whose eigenvalues are the
//! FFT of the first row. The S-fBM covariance is convex and decreasing on $[0,T]$
//! and zero afterwards, so the embedding is non-negative definite up to rounding,
//! including for grids longer than the horizon.
//!
//! Random streams: every path draws from `ChaCha8Rng::seed_from_u64(seed)` with
//! `set_stream(index)`, so batch member `i` is unaffected by how many members
//! follow it.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::theory::SfbmParams;

/// Relative size below which negative embedding eigenvalues are treated as rounding.
pub const EIGEN_CLIP_TOL: f64 = 1e-8;
/// Largest grid accepted by the dense fallback.
pub const DENSE_MAX_POINTS: usize = 2048;

/// Counter-based generator for stream `stream` of master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n_points: usize,
    dt: f64,
}

impl GridSpec {
    pub fn new(n_points: usize, dt: f64) -> Result<Self> {
        ensure(n_points >= 2, || format!("grid needs at least 2 points, got {n_points}"))?;
        ensure(dt > 0.0 && dt.is_finite(), || format!("dt must be positive, got {dt}"))?;
        Ok(Self { n_points, dt })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn span(&self) -> f64 {
        self.n_points as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPath {
    pub values: Vec<f64>,
    pub grid: GridSpec,
    pub mode: SfbmParams,
    pub seed: u64,
}

impl GaussianPath {
    /// Debug dump with columns `time,omega`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(Error::io(path))?);
        writeln!(f, "time,omega").map_err(Error::io(path))?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(f, "{},{}", k as f64 * self.grid.dt(), v).map_err(Error::io(path))?;
        }
        Ok(())
    }
}

/// Precomputed circulant embedding for one (mode, grid) pair.
#[derive(Clone)]
pub struct CirculantSampler {
    n: usize,
    sqrt_eig: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    mean: f64,
}

impl fmt::Debug for CirculantSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CirculantSampler")
            .field("n", &self.n)
            .field("embedding", &self.sqrt_eig.len())
            .finish()
    }
}

impl CirculantSampler {
    /// Builds the embedding; the grid may extend past the horizon.
    pub fn new(mode: &SfbmParams, grid: &GridSpec) -> Result<Self> {
        let r: Vec<f64> = (0..grid.n_points())
            .map(|k| mode.covariance(k as f64 * grid.dt()))
            .collect();
        Self::from_autocovariance(&r, mode.mean())
    }

    /// Embedding of an arbitrary stationary covariance sequence `r[0..n]`.
    pub fn from_autocovariance(r: &[f64], mean: f64) -> Result<Self> {
        let n = r.len();
        ensure(n >= 2, || "need at least two covariance lags".into())?;
        let m = 2 * (n - 1);
        let mut buf: Vec<Complex<f64>> = (0..m)
            .map(|k| Complex::new(r[if k < n { k } else { m - k }], 0.0))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut buf);
        let max = buf.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
        let min = buf.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        if min < -EIGEN_CLIP_TOL * max {
            return Err(Error::Embedding {
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        let sqrt_eig = buf.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect();
        Ok(Self { n, sqrt_eig, fft, mean })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    fn transform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = self
            .sqrt_eig
            .iter()
            .map(|&s| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex::new(s * a, s * b)
            })
            .collect();
        self.fft.process(&mut buf);
        buf
    }

    /// One zero-mean path written to `out` (length [`len`](Self::len)).
    pub fn sample_centered_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        assert_eq!(out.len(), self.n);
        let buf = self.transform(rng);
        for (o, c) in out.iter_mut().zip(&buf) {
            *o = c.re;
        }
    }

    /// Two independent zero-mean paths from one transform (real and imaginary parts).
    pub fn sample_centered_pair_into<R: Rng + ?Sized>(&self, rng: &mut R, a: &mut [f64], b: &mut [f64]) {
        assert_eq!(a.len(), self.n);
        assert_eq!(b.len(), self.n);
        let buf = self.transform(rng);
        for ((x, y), c) in a.iter_mut().zip(b.iter_mut()).zip(&buf) {
            *x = c.re;
            *y = c.im;
        }
    }

    /// One path with the mode's mean added.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.sample_centered_into(rng, &mut out);
        for v in &mut out {
            *v += self.mean;
        }
        out
    }
}

fn check_span(mode: &SfbmParams, grid: &GridSpec) -> Result<()> {
    ensure(grid.span() <= mode.horizon() * (1.0 + 1e-12), || {
        format!("grid span {} exceeds the horizon {}", grid.span(), mode.horizon())
    })
}

/// One path of the mode on `grid`, drawn from stream 0 of `seed`.
pub fn sample_sfbm_path(mode: &SfbmParams, grid: &GridSpec, seed: u64) -> Result<GaussianPath> {
    check_span(mode, grid)?;
    let sampler = CirculantSampler::new(mode, grid)?;
    Ok(GaussianPath {
        values: sampler.sample(&mut stream_rng(seed, 0)),
        grid: *grid,
        mode: *mode,
        seed,
    })
}

/// Independent paths, mode `i` drawn from stream `i` of `seed`.
pub fn sample_many(modes: &[SfbmParams], grid: &GridSpec, seed: u64) -> Result<Vec<GaussianPath>> {
    use rayon::prelude::*;
    modes
        .par_iter()
        .enumerate()
        .map(|(i, mode)| {
            let wrap = |e| Error::Mode {
                index: i,
                source: Box::new(e),
            };
            check_span(mode, grid).map_err(wrap)?;
            let sampler = CirculantSampler::new(mode, grid).map_err(wrap)?;
            Ok(GaussianPath {
                values: sampler.sample(&mut stream_rng(seed, i as u64)),
                grid: *grid,
                mode: *mode,
                seed,
            })
        })
        .collect()
}

/// Cholesky-based sampler for short grids, used to cross-check the FFT path.
pub fn sample_dense(mode: &SfbmParams, grid: &GridSpec, seed: u64) -> Result<GaussianPath> {
    check_span(mode, grid)?;
    let n = grid.n_points();
    ensure(n <= DENSE_MAX_POINTS, || {
        format!("dense sampler limited to {DENSE_MAX_POINTS} points, got {n}")
    })?;
    let jitter = 1e-12 * mode.variance();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let c = mode.covariance((i as f64 - j as f64) * grid.dt());
        if i == j {
            c + jitter
        } else {
            c
        }
    });
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance matrix is not positive definite".into()))?;
    let mut rng = stream_rng(seed, 0);
    let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let values = (chol.l() * xi).iter().map(|v| v + mode.mean()).collect();
    Ok(GaussianPath {
        values,
        grid: *grid,
        mode: *mode,
        seed,
    })
}
