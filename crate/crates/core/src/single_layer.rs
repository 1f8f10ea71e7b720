//! Plain kernel interpolation and ridge regression on the input domain.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gram::{gram_sym, solve_interpolation, solve_ridge};
use crate::kernels::ScalarKernelSpec;

/// `f(x) = Σᵢ αᵢ K(xᵢ, x)`; `lambda = 0` means interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleLayerModel {
    pub kernel: ScalarKernelSpec,
    pub centers: Vec<Vec<f64>>,
    pub alpha: DVector<f64>,
    pub lambda: f64,
}

impl SingleLayerModel {
    pub fn fit(kernel: &ScalarKernelSpec, xs: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::arg("need at least one sample"));
        }
        check_dim(xs.len(), y.len())?;
        let alpha = if lambda == 0.0 {
            solve_interpolation(kernel, xs, y)?
        } else if lambda > 0.0 {
            solve_ridge(kernel, xs, y, lambda)?
        } else {
            return Err(Error::arg(format!("lambda must be >= 0, got {lambda}")));
        };
        Ok(Self { kernel: *kernel, centers: xs.to_vec(), alpha, lambda })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.kernel.dim(), x.len())?;
        Ok(self.centers.iter().zip(self.alpha.iter()).map(|(c, a)| a * self.kernel.value(c, x)).sum())
    }

    /// `αᵀ M_{X,X} α`, the squared RKHS norm of the fitted function.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let m: DMatrix<f64> = gram_sym(&self.kernel, &self.centers).expect("centres validated at fit");
        self.alpha.dot(&(&m * &self.alpha))
    }
}

pub fn fit_single(kernel: &ScalarKernelSpec, xs: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<SingleLayerModel> {
    SingleLayerModel::fit(kernel, xs, y, lambda)
}

pub fn predict_single(model: &SingleLayerModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

pub fn rkhs_norm_sq_single(model: &SingleLayerModel) -> f64 {
    model.rkhs_norm_sq()
}
