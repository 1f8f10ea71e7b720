//! JSON run configuration.
//!
//! ```json
//! {
//!   "mode": "regress",
//!   "kernel": { "family": "gauss", "sigma": 0.1 },
//!   "inner": { "family": "diag_scaled", "kernel": { "family": "poly", "p": 1 }, "weights": [1, 1] },
//!   "opt": { "restarts": 16, "max_iters": 500 },
//!   "cv": { "folds": 5, "metric": "holdout_mse" },
//!   "seed": 7
//! }
//! ```
//!
//! Unset optimiser and fold seeds are derived from `seed`.

use serde::Deserialize;

use crate::deep_model::Mode;
use crate::error::{Error, Result};
use crate::experiments::{seed_stream, CvMetric, CvPlan, SeedStream, TwoLayerSpec};
use crate::kernels::{KernelFamily, MatrixKernelSpec, ScalarKernelSpec};
use crate::optimize::BfgsConfig;

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Interpolate,
    Regress,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerConfig {
    DiagScaled { kernel: KernelFamily, weights: Vec<f64> },
    DiagMixture { components: Vec<KernelFamily> },
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig::DiagScaled { kernel: KernelFamily::Poly { p: 1 }, weights: vec![1.0, 1.0] }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub restarts: Option<usize>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub seed: Option<u64>,
    pub init_scale: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: Option<usize>,
    pub lambda_grid: Option<Vec<f64>>,
    pub mu_grid: Option<Vec<f64>>,
    pub metric: Option<String>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: RunMode,
    /// Outer kernel.
    #[serde(default = "default_outer")]
    pub kernel: KernelFamily,
    #[serde(default)]
    pub inner: InnerConfig,
    #[serde(default)]
    pub opt: OptConfig,
    #[serde(default)]
    pub cv: CvConfig,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_outer() -> KernelFamily {
    KernelFamily::TensorMatern { s: 1 }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !(cfg.gamma >= 0.0 && cfg.gamma.is_finite()) {
            return Err(Error::Config("gamma must be >= 0".into()));
        }
        if cfg.mode == RunMode::Interpolate && (cfg.lambda.is_some() || cfg.mu.is_some()) {
            return Err(Error::Config("lambda and mu only apply to mode 'regress'".into()));
        }
        if cfg.lambda.is_some() != cfg.mu.is_some() {
            return Err(Error::Config("set both lambda and mu, or neither to cross-validate".into()));
        }
        cfg.spec(1).map_err(|e| Error::Config(e.to_string()))?;
        cfg.cv_plan()?;
        cfg.fixed_mode()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn inner_kernel(&self, input_dim: usize) -> Result<MatrixKernelSpec> {
        Ok(match &self.inner {
            InnerConfig::DiagScaled { kernel, weights } => {
                MatrixKernelSpec::diag_scaled(ScalarKernelSpec::new(*kernel, input_dim)?, weights.clone())?
            }
            InnerConfig::DiagMixture { components } => MatrixKernelSpec::diag_mixture(
                components.iter().map(|k| ScalarKernelSpec::new(*k, input_dim)).collect::<Result<_>>()?,
            )?,
        })
    }

    pub fn bfgs(&self) -> Result<BfgsConfig> {
        let d = BfgsConfig::default();
        let cfg = BfgsConfig {
            restarts: self.opt.restarts.unwrap_or(d.restarts),
            max_iters: self.opt.max_iters.unwrap_or(d.max_iters),
            grad_tol: self.opt.grad_tol.unwrap_or(d.grad_tol),
            init_scale: self.opt.init_scale.unwrap_or(d.init_scale),
            seed: self.opt.seed.unwrap_or_else(|| seed_stream(self.seed, SeedStream::Init)),
            ..d
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Kernels and optimiser for data of dimension `input_dim`.
    pub fn spec(&self, input_dim: usize) -> Result<TwoLayerSpec> {
        let inner = self.inner_kernel(input_dim)?;
        let outer = ScalarKernelSpec::new(self.kernel, inner.output_dim())?;
        Ok(TwoLayerSpec { inner, outer, gamma: self.gamma, opt: self.bfgs()? })
    }

    pub fn cv_plan(&self) -> Result<CvPlan> {
        let d = CvPlan::default();
        let plan = CvPlan {
            folds: self.cv.folds.unwrap_or(d.folds),
            lambda_grid: self.cv.lambda_grid.clone().unwrap_or(d.lambda_grid),
            mu_grid: self.cv.mu_grid.clone().unwrap_or(d.mu_grid),
            seed: self.cv.seed.unwrap_or_else(|| seed_stream(self.seed, SeedStream::Folds)),
            metric: self.cv.metric.as_deref().map_or(Ok(d.metric), str::parse::<CvMetric>)?,
            restarts: self.cv.restarts,
        };
        plan.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(plan)
    }

    /// The fixed mode, or `None` when regression parameters come from cross-validation.
    pub fn fixed_mode(&self) -> Result<Option<Mode>> {
        match (self.mode, self.lambda, self.mu) {
            (RunMode::Interpolate, _, _) => Ok(Some(Mode::Interpolation)),
            (RunMode::Regress, Some(lambda), Some(mu)) => {
                let m = Mode::Regression { lambda, mu };
                m.validate().map_err(|e| Error::Config(e.to_string()))?;
                Ok(Some(m))
            }
            _ => Ok(None),
        }
    }
}
