use rayon::prelude::*;

use super::cv::{cross_validate, CvOutcome, CvPlan, TwoLayerSpec};
use super::{pointwise_error_grid, sample_dataset, Dataset, ErrorGrid, EvalGrid, SamplingPlan, Target};
use crate::deep_model::{fit_two_layer, Mode, TwoLayerModel};
use crate::error::Result;
use crate::optimize::OptimizationResult;
use crate::single_layer::SingleLayerModel;

/// One single- versus two-layer experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub spec: TwoLayerSpec,
    pub plan: SamplingPlan,
    /// Also supplies the baseline's λ candidates in regression mode.
    pub cv: CvPlan,
    pub regression: bool,
    pub grid: EvalGrid,
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub dataset: Dataset,
    pub model: TwoLayerModel,
    pub optimization: OptimizationResult,
    pub cv: Option<CvOutcome>,
    pub baseline: SingleLayerModel,
    pub two_layer: ErrorGrid,
    pub single_layer: ErrorGrid,
}

impl ComparisonReport {
    /// `key=value` summary lines, each key prefixed with `prefix.`.
    pub fn summary(&self, prefix: &str) -> String {
        let mut lines: Vec<(String, String)> = [
            ("n_samples", self.dataset.len().to_string()),
            ("lambda", self.model.lambda().to_string()),
            ("mu", self.model.mu().to_string()),
            ("objective", self.model.objective_value().to_string()),
            ("restart_index", self.optimization.restart_index.to_string()),
            ("iterations", self.optimization.iterations.to_string()),
            ("converged", self.optimization.converged.to_string()),
            ("grad_norm", self.optimization.grad_norm.to_string()),
            ("baseline_lambda", self.baseline.lambda.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (arm, g) in [("two_layer", &self.two_layer), ("single_layer", &self.single_layer)] {
            lines.push((format!("{arm}.mean_error"), g.stats.mean.to_string()));
            lines.push((format!("{arm}.max_error"), g.stats.max.to_string()));
            lines.push((format!("{arm}.frac_above_10pct"), g.stats.frac_above_10pct.to_string()));
        }
        lines.into_iter().map(|(k, v)| format!("{prefix}.{k}={v}\n")).collect()
    }
}

/// Samples data, fits both arms and measures their errors on the grid.
pub fn run_comparison(target: &dyn Target, cmp: &Comparison) -> Result<ComparisonReport> {
    let data = sample_dataset(target, &cmp.plan)?;
    let problem = cmp.spec.problem(&data)?;

    let (mode, cv) = if cmp.regression {
        let outcome = cross_validate(&data, &cmp.spec, &cmp.cv)?;
        (Mode::Regression { lambda: outcome.best_lambda, mu: outcome.best_mu }, Some(outcome))
    } else {
        (Mode::Interpolation, None)
    };
    let (model, optimization) = fit_two_layer(&problem, mode, &cmp.spec.opt)?;
    let two_layer = pointwise_error_grid(&|t| model.predict(t), target, &cmp.grid)?;

    let base_kernel = cmp.spec.outer.with_dim(data.dim())?;
    let (baseline, single_layer) = if cmp.regression {
        let fits: Vec<(SingleLayerModel, ErrorGrid)> = cmp
            .cv
            .lambda_grid
            .par_iter()
            .map(|&lambda| {
                let m = SingleLayerModel::fit(&base_kernel, &data.xs, &data.y, lambda)?;
                let e = pointwise_error_grid(&|t| m.predict(t), target, &cmp.grid)?;
                Ok((m, e))
            })
            .collect::<Result<_>>()?;
        let mut best = 0;
        for (i, (m, e)) in fits.iter().enumerate() {
            let (bm, be) = &fits[best];
            if e.stats.mean < be.stats.mean || (e.stats.mean == be.stats.mean && m.lambda > bm.lambda) {
                best = i;
            }
        }
        fits.into_iter().nth(best).expect("grid validated non-empty")
    } else {
        let m = SingleLayerModel::fit(&base_kernel, &data.xs, &data.y, 0.0)?;
        let e = pointwise_error_grid(&|t| m.predict(t), target, &cmp.grid)?;
        (m, e)
    };

    Ok(ComparisonReport { dataset: data, model, optimization, cv, baseline, two_layer, single_layer })
}

/// Rows `(t₁, t₂, g₁(t), …, g_D(t))` over the grid.
pub fn inner_transform_dump(model: &TwoLayerModel, grid: &EvalGrid) -> Result<Vec<Vec<f64>>> {
    grid.points()?
        .par_iter()
        .map(|t| {
            let mut row = t.to_vec();
            row.extend(model.inner_map(t)?);
            Ok(row)
        })
        .collect()
}
