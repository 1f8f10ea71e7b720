//! Deep kernels of arbitrary depth `L`.
//!
//! `f₁ ∘ f₂ ∘ … ∘ f_L` where layer `f_l` (for `l ≥ 2`) is a vector-valued
//! kernel expansion centred at the images of the data under the deeper
//! layers, and `f₁ = Σ_j α_j K₁(w_j, ·)` with `w_j = f₂ ∘ … ∘ f_L(x_j)`.

use nalgebra::{DMatrix, DVector};

use super::problem::inner_eval;
use crate::error::{check_dim, Error, Result};
use crate::gram::gram_sym;
use crate::kernels::{MatrixKernelSpec, ScalarKernelSpec};
use crate::optimize::{finite_diff_grad, multistart, BfgsConfig, Objective, OptimizationResult, SENTINEL};

/// One vector-valued layer: kernel and coefficients (row-major `N × d_out`).
#[derive(Clone, Debug, PartialEq)]
pub struct InnerLayer {
    pub kernel: MatrixKernelSpec,
    pub coeffs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    xs: Vec<Vec<f64>>,
    /// `f₂, …, f_L`, outermost first.
    layers: Vec<InnerLayer>,
    outer: ScalarKernelSpec,
    alpha: DVector<f64>,
    /// Centres of each layer, same order as `layers`.
    centers: Vec<Vec<Vec<f64>>>,
    /// `f₂ ∘ … ∘ f_L(x_j)`.
    top: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    Squared,
    /// Zero when every prediction matches its target, otherwise the sentinel.
    InterpolationIndicator,
}

/// Relative tolerance of the interpolation indicator.
pub const INDICATOR_TOL: f64 = 1e-8;

impl LayerStack {
    /// `layers` are ordered from `f₂` (feeding the outer kernel) down to `f_L`.
    pub fn new(xs: Vec<Vec<f64>>, layers: Vec<InnerLayer>, outer: ScalarKernelSpec, alpha: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::arg("need at least one data point"));
        }
        check_dim(xs.len(), alpha.len())?;
        let mut expected_in = xs[0].len();
        for x in &xs {
            check_dim(expected_in, x.len())?;
        }
        for layer in layers.iter().rev() {
            if layer.kernel.input_dim() != expected_in {
                return Err(Error::arg(format!(
                    "layer expects inputs of dimension {}, previous layer yields {expected_in}",
                    layer.kernel.input_dim()
                )));
            }
            check_dim(xs.len() * layer.kernel.output_dim(), layer.coeffs.len())?;
            expected_in = layer.kernel.output_dim();
        }
        if outer.dim() != expected_in {
            return Err(Error::arg(format!("outer kernel on dimension {}, innermost chain yields {expected_in}", outer.dim())));
        }

        let mut centers = vec![Vec::new(); layers.len()];
        let mut current = xs.clone();
        for (i, layer) in layers.iter().enumerate().rev() {
            let next = current.iter().map(|p| inner_eval(&layer.coeffs, &layer.kernel, &current, p)).collect::<Result<Vec<_>>>()?;
            centers[i] = std::mem::replace(&mut current, next);
        }
        Ok(Self { xs, layers, outer, alpha: DVector::from_vec(alpha), centers, top: current })
    }

    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn layers(&self) -> &[InnerLayer] {
        &self.layers
    }

    pub fn outer(&self) -> &ScalarKernelSpec {
        &self.outer
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    /// Degrees of freedom `N·(1 + Σ_{l≥2} d_l)`.
    pub fn dof(&self) -> usize {
        self.xs.len() * (1 + self.layers.iter().map(|l| l.kernel.output_dim()).sum::<usize>())
    }

    /// `f₂ ∘ … ∘ f_L(x)`.
    pub fn feature_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.xs[0].len(), x.len())?;
        let mut z = x.to_vec();
        for (layer, centers) in self.layers.iter().zip(&self.centers).rev() {
            z = inner_eval(&layer.coeffs, &layer.kernel, centers, &z)?;
        }
        Ok(z)
    }

    /// `𝒦^L(x, y) = K₁(f₂ ∘ … ∘ f_L(x), f₂ ∘ … ∘ f_L(y))`.
    pub fn deep_kernel_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.outer.eval(&self.feature_map(x)?, &self.feature_map(y)?)
    }

    /// `f₁ ∘ … ∘ f_L(x)`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = self.feature_map(x)?;
        Ok(self.top.iter().zip(self.alpha.iter()).map(|(w, a)| a * self.outer.value(w, &z)).sum())
    }

    /// All coefficients as one vector: `α`, then each layer outermost first.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.alpha.as_slice().to_vec();
        for layer in &self.layers {
            p.extend_from_slice(&layer.coeffs);
        }
        p
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        check_dim(self.params().len(), params.len())?;
        let n = self.xs.len();
        let mut offset = n;
        let mut layers = self.layers.clone();
        for layer in &mut layers {
            let len = layer.coeffs.len();
            layer.coeffs.copy_from_slice(&params[offset..offset + len]);
            offset += len;
        }
        Self::new(self.xs.clone(), layers, self.outer, params[..n].to_vec())
    }

    /// `Σ ℒ(y_i, f(x_i)) + Σ_l λ_l ‖f_l‖²` with `lambdas = [λ₁, …, λ_L]`.
    pub fn objective(&self, loss: Loss, lambdas: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.depth(), lambdas.len())?;
        check_dim(self.xs.len(), y.len())?;
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::arg("layer weights must be >= 0"));
        }
        let k1 = gram_sym(&self.outer, &self.top)?;
        let pred = &k1 * &self.alpha;
        let data = match loss {
            Loss::Squared => pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>(),
            Loss::InterpolationIndicator => {
                let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs())) + 1.0;
                if pred.iter().zip(y).all(|(p, t)| (p - t).abs() <= INDICATOR_TOL * scale) {
                    0.0
                } else {
                    return Ok(SENTINEL);
                }
            }
        };
        let mut total = data + lambdas[0] * self.alpha.dot(&pred);
        for ((layer, centers), lam) in self.layers.iter().zip(&self.centers).zip(&lambdas[1..]) {
            total += lam * layer_norm_sq(layer, centers)?;
        }
        Ok(total)
    }
}

/// `Σ_ℓ c_ℓᵀ [w_ℓ K_ℓ(z_j, z_k)] c_ℓ` for one layer.
fn layer_norm_sq(layer: &InnerLayer, centers: &[Vec<f64>]) -> Result<f64> {
    let d_out = layer.kernel.output_dim();
    let mut total = 0.0;
    for l in 0..d_out {
        let (k, w) = layer.kernel.channel(l);
        let g: DMatrix<f64> = gram_sym(k, centers)? * w;
        let cl = DVector::from_iterator(centers.len(), (0..centers.len()).map(|j| layer.coeffs[j * d_out + l]));
        total += cl.dot(&(g * &cl));
    }
    Ok(total)
}

pub fn deep_kernel_eval(stack: &LayerStack, x: &[f64], y: &[f64]) -> Result<f64> {
    stack.deep_kernel_eval(x, y)
}

pub fn objective_general_l(stack: &LayerStack, loss: Loss, lambdas: &[f64], y: &[f64]) -> Result<f64> {
    stack.objective(loss, lambdas, y)
}

/// Step of the central differences used for `L > 2`.
pub const FD_STEP: f64 = 1e-6;

struct StackObjective<'a> {
    template: &'a LayerStack,
    loss: Loss,
    lambdas: &'a [f64],
    y: &'a [f64],
}

impl Objective for StackObjective<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        self.template
            .with_params(p)
            .and_then(|s| s.objective(self.loss, self.lambdas, self.y))
            .map_or(SENTINEL, |v| if v.is_finite() { v.min(SENTINEL) } else { SENTINEL })
    }

    fn value_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
        let v = self.value(p);
        if v >= SENTINEL {
            return (SENTINEL, vec![0.0; p.len()]);
        }
        match finite_diff_grad(|q| self.value(q), p, FD_STEP) {
            Ok(g) => (v, g),
            Err(_) => (SENTINEL, vec![0.0; p.len()]),
        }
    }
}

/// Minimises the squared-loss objective over all coefficients of `template`
/// with finite-difference gradients.
pub fn fit_layer_stack(
    template: &LayerStack,
    lambdas: &[f64],
    y: &[f64],
    config: &BfgsConfig,
) -> Result<(LayerStack, OptimizationResult)> {
    template.objective(Loss::Squared, lambdas, y)?;
    let obj = StackObjective { template, loss: Loss::Squared, lambdas, y };
    let best = multistart(&obj, template.params().len(), config)?;
    Ok((template.with_params(&best.c_best)?, best))
}
