//! Simulation and calibration of the nested log S-fBM one-factor model.
//!
//! Stock returns follow
//! $dx^i = \beta_i e^{\Omega/2} dW^0 + \sigma_i e^{(\gamma_i\Omega + \omega^i)/2} dB^i$
//! where $\Omega$ and $\omega^i$ are stationary fractional Brownian motions
//! (S-fBM). The crate provides the closed-form kernels of the model, an exact
//! path sampler, a panel simulator, volatility estimators, a GMM Hurst
//! calibrator and the end-to-end five-step calibration pipeline.

pub mod error;
pub mod experiments;
pub mod gmm;
pub mod io;
pub mod panel;
pub mod pipeline;
pub mod sampler;
pub mod sim;
pub mod theory;
pub mod vol;

pub use error::{Error, Result};
