use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Dataset;
use crate::deep_model::{fit_two_layer, Mode, TwoLayerProblem};
use crate::error::{Error, Result};
use crate::kernels::{MatrixKernelSpec, ScalarKernelSpec};
use crate::optimize::BfgsConfig;

/// Kernels and optimiser settings of a two-layer fit.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerSpec {
    pub inner: MatrixKernelSpec,
    pub outer: ScalarKernelSpec,
    pub gamma: f64,
    pub opt: BfgsConfig,
}

impl TwoLayerSpec {
    pub fn problem(&self, data: &Dataset) -> Result<TwoLayerProblem> {
        TwoLayerProblem::new(&data.xs, &data.y, self.inner.clone(), self.outer)?.with_gamma(self.gamma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvMetric {
    /// Mean squared prediction error on the held-out fold.
    HoldoutMse,
    /// Regression objective reached on the training folds.
    TrainObjective,
}

impl std::str::FromStr for CvMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holdout_mse" => Ok(CvMetric::HoldoutMse),
            "train_objective" => Ok(CvMetric::TrainObjective),
            _ => Err(Error::Config(format!("unknown cv metric '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvPlan {
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub seed: u64,
    pub metric: CvMetric,
    /// Restarts per fold fit; `None` uses the model's own budget.
    pub restarts: Option<usize>,
}

impl Default for CvPlan {
    fn default() -> Self {
        Self {
            folds: 5,
            lambda_grid: Self::binary_grid(),
            mu_grid: Self::binary_grid(),
            seed: 0,
            metric: CvMetric::HoldoutMse,
            restarts: None,
        }
    }
}

impl CvPlan {
    /// `2^{−2t+1}`, `t = 1..10`.
    pub fn binary_grid() -> Vec<f64> {
        (1..=10).map(|t| 2f64.powi(-2 * t + 1)).collect()
    }

    /// `10^{−2t+1}`, `t = 1..6`.
    pub fn decimal_grid() -> Vec<f64> {
        (1..=6).map(|t| 10f64.powi(-2 * t + 1)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::arg("cross-validation needs at least two folds"));
        }
        if self.lambda_grid.is_empty() || self.mu_grid.is_empty() {
            return Err(Error::arg("cross-validation grids must be non-empty"));
        }
        if self.lambda_grid.iter().chain(&self.mu_grid).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::arg("grid values must be positive"));
        }
        if self.restarts == Some(0) {
            return Err(Error::arg("restarts must be >= 1"));
        }
        Ok(())
    }
}

/// Shuffled contiguous folds covering `0..n` exactly once.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::arg(format!("cannot split {n} samples into {folds} non-empty folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvCell {
    pub lambda: f64,
    pub mu: f64,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvOutcome {
    pub best_lambda: f64,
    pub best_mu: f64,
    pub cells: Vec<CvCell>,
}

fn fold_score(data: &Dataset, folds: &[Vec<usize>], k: usize, spec: &TwoLayerSpec, opt: &BfgsConfig, mode: Mode, metric: CvMetric) -> Result<f64> {
    let train_idx: Vec<usize> = folds.iter().enumerate().filter(|(f, _)| *f != k).flat_map(|(_, v)| v.iter().copied()).collect();
    let train = data.subset(&train_idx);
    let problem = spec.problem(&train)?;
    let (model, _) = match fit_two_layer(&problem, mode, opt) {
        Ok(fit) => fit,
        Err(e) if e.is_numerical() => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    Ok(match metric {
        CvMetric::TrainObjective => model.objective_value(),
        CvMetric::HoldoutMse => {
            let held = &folds[k];
            let mut sse = 0.0;
            for &i in held {
                sse += (model.predict(&data.xs[i])? - data.y[i]).powi(2);
            }
            sse / held.len() as f64
        }
    })
}

/// Grid search over `(λ, μ)`; ties go to the larger pair.
pub fn cross_validate(data: &Dataset, spec: &TwoLayerSpec, plan: &CvPlan) -> Result<CvOutcome> {
    plan.validate()?;
    let folds = fold_partition(data.len(), plan.folds, plan.seed)?;
    let opt = BfgsConfig { restarts: plan.restarts.unwrap_or(spec.opt.restarts), ..spec.opt };
    let pairs: Vec<(f64, f64)> = plan.lambda_grid.iter().flat_map(|&l| plan.mu_grid.iter().map(move |&m| (l, m))).collect();
    let jobs: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|c| (0..plan.folds).map(move |k| (c, k))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, k)| {
            let (lambda, mu) = pairs[c];
            fold_score(data, &folds, k, spec, &opt, Mode::Regression { lambda, mu }, plan.metric)
        })
        .collect::<Result<_>>()?;

    let cells: Vec<CvCell> = pairs
        .iter()
        .enumerate()
        .map(|(c, &(lambda, mu))| {
            let fold_scores = scores[c * plan.folds..(c + 1) * plan.folds].to_vec();
            let mean = fold_scores.iter().sum::<f64>() / plan.folds as f64;
            CvCell { lambda, mu, fold_scores, mean }
        })
        .collect();

    let mut best: Option<&CvCell> = None;
    for cell in &cells {
        if !cell.mean.is_finite() {
            continue;
        }
        best = match best {
            None => Some(cell),
            Some(b) if cell.mean < b.mean => Some(cell),
            Some(b) if cell.mean == b.mean && (cell.lambda, cell.mu) > (b.lambda, b.mu) => Some(cell),
            keep => keep,
        };
    }
    let best = best.ok_or_else(|| Error::Optimization("no (lambda, mu) pair produced a finite score".into()))?;
    Ok(CvOutcome { best_lambda: best.lambda, best_mu: best.mu, cells })
}
