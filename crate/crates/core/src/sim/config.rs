use rand::Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use super::NestedModelSpec;
use crate::error::{ensure, Error, Result};
use crate::sampler::stream_rng;
use crate::theory::SfbmParams;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// How a per-stock parameter is populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamDraw {
    Constant { value: f64 },
    Beta { a: f64, b: f64 },
    Values { values: Vec<f64> },
}

impl ParamDraw {
    fn realize(&self, n: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
        match self {
            ParamDraw::Constant { value } => Ok(vec![*value; n]),
            ParamDraw::Values { values } => {
                ensure(values.len() == n, || {
                    format!("expected {n} values, got {}", values.len())
                })?;
                Ok(values.clone())
            }
            ParamDraw::Beta { a, b } => {
                let law = Beta::new(*a, *b).map_err(|e| Error::Config(e.to_string()))?;
                let mut rng = stream_rng(seed, stream);
                Ok((0..n).map(|_| rng.sample(law)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub hurst: f64,
    pub intermittency_sq: f64,
}

/// User-facing model document (TOML). Per-stock parameters may be constants,
/// explicit lists or Beta draws; the horizon defaults to the sample span.
///
/// ```toml
/// schema_version = 1
/// n_stocks = 100
/// n_periods = 8192
/// subdivisions = 64
///
/// [factor]
/// hurst = 0.11
/// intermittency_sq = 0.0025
///
/// [idiosyncratic]
/// hurst = 0.01
/// intermittency_sq = 0.0025
///
/// [beta]
/// kind = "beta"
/// a = 9.66
/// b = 5.63
///
/// [sigma]
/// kind = "constant"
/// value = 1.0
///
/// [gamma]
/// kind = "constant"
/// value = 0.2
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub n_stocks: usize,
    pub n_periods: usize,
    pub subdivisions: usize,
    #[serde(default = "one")]
    pub period: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub allow_span_beyond_horizon: bool,
    pub factor: ModeConfig,
    pub idiosyncratic: ModeConfig,
    pub beta: ParamDraw,
    pub sigma: ParamDraw,
    pub gamma: ParamDraw,
}

fn one() -> f64 {
    1.0
}

/// Key mixed into the master seed for parameter draws, keeping them apart from
/// the path streams.
const PARAM_SEED_KEY: u64 = 0x5eed_0f_be7a;

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        ensure(cfg.schema_version == MODEL_SCHEMA_VERSION, || {
            format!("unsupported schema_version {}", cfg.schema_version)
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    /// Realizes random per-stock parameters from `seed` (betas stream 0, sigmas
    /// stream 1, gammas stream 2 of `seed ^ PARAM_SEED_KEY`).
    pub fn build(&self, seed: u64) -> Result<NestedModelSpec> {
        let n = self.n_stocks;
        let key = seed ^ PARAM_SEED_KEY;
        let betas = self.beta.realize(n, key, 0)?;
        let sigmas = self.sigma.realize(n, key, 1)?;
        let gammas = self.gamma.realize(n, key, 2)?;
        let horizon = self.horizon.unwrap_or(self.n_periods as f64 * self.period);
        let factor = SfbmParams::new(self.factor.hurst, self.factor.intermittency_sq, horizon)?;
        let idio = SfbmParams::new(
            self.idiosyncratic.hurst,
            self.idiosyncratic.intermittency_sq,
            horizon,
        )?;
        let spec = NestedModelSpec {
            betas,
            sigmas,
            gammas,
            factor_mode: factor,
            idio_modes: vec![idio; n],
            n_periods: self.n_periods,
            subdivisions: self.subdivisions,
            period: self.period,
            allow_span_beyond_horizon: self.allow_span_beyond_horizon,
        };
        spec.validate()?;
        Ok(spec)
    }
}
