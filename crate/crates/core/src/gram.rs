//! Gram matrices and symmetric positive-definite solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::kernels::ScalarKernelSpec;

/// Jitter escalation for near-singular symmetric systems.
///
/// The first attempt is always unjittered; subsequent attempts add
/// `jitter_start·growth^k` to the diagonal until `jitter_max` is exceeded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpdSolvePolicy {
    pub jitter_start: f64,
    pub jitter_max: f64,
    pub growth: f64,
}

impl Default for SpdSolvePolicy {
    fn default() -> Self {
        Self { jitter_start: 1e-12, jitter_max: 1e-6, growth: 10.0 }
    }
}

impl SpdSolvePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter_start > 0.0 && self.jitter_start <= self.jitter_max && self.growth > 1.0) {
            return Err(Error::arg("jitter policy needs 0 < jitter_start <= jitter_max and growth > 1"));
        }
        Ok(())
    }

    fn schedule(&self) -> impl Iterator<Item = f64> + '_ {
        let mut next = Some(0.0);
        std::iter::from_fn(move || {
            let cur = next?;
            let following = if cur == 0.0 { self.jitter_start } else { cur * self.growth };
            next = (following <= self.jitter_max * (1.0 + 1e-12)).then_some(following);
            Some(cur)
        })
    }
}

/// A Cholesky factorisation of `M + jitter·I`.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factorises `m`, escalating jitter per `policy`.
    pub fn new(m: &DMatrix<f64>, policy: &SpdSolvePolicy) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::arg("spd factorisation needs a square matrix"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular { condition: f64::INFINITY, jitter: 0.0 });
        }
        for jitter in policy.schedule() {
            let mut shifted = m.clone();
            if jitter > 0.0 {
                for i in 0..m.nrows() {
                    shifted[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(shifted) {
                return Ok(Self { chol, jitter });
            }
        }
        Err(Error::Singular { condition: condition_estimate(m), jitter: policy.jitter_max })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// The explicit inverse of `M + jitter·I`.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Ratio of extreme eigenvalue magnitudes; infinite when `m` is not positive definite.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solution of `(M + jitter·I) x = b` with the jitter actually used.
#[derive(Clone, Debug)]
pub struct SpdSolution {
    pub x: DMatrix<f64>,
    pub jitter: f64,
}

/// Solves `(M + jitter·I) x = b` by Cholesky with jitter escalation.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, policy: &SpdSolvePolicy) -> Result<SpdSolution> {
    check_dim(m.nrows(), b.nrows())?;
    let factor = SpdFactor::new(m, policy)?;
    Ok(SpdSolution { x: factor.solve(b), jitter: factor.jitter() })
}

/// Vector right-hand-side convenience for [`spd_solve`].
pub fn spd_solve_vec(m: &DMatrix<f64>, b: &DVector<f64>, policy: &SpdSolvePolicy) -> Result<(DVector<f64>, f64)> {
    check_dim(m.nrows(), b.len())?;
    let factor = SpdFactor::new(m, policy)?;
    Ok((factor.solve_vec(b), factor.jitter()))
}

/// `K(X_i, Z_j)`. Dimension-checked.
pub fn gram<P: AsRef<[f64]>, Q: AsRef<[f64]>>(kernel: &ScalarKernelSpec, xs: &[P], zs: &[Q]) -> Result<DMatrix<f64>> {
    for p in xs.iter().map(AsRef::as_ref).chain(zs.iter().map(AsRef::as_ref)) {
        check_dim(kernel.dim(), p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("gram points must be finite"));
        }
    }
    // Same slice on both sides: build the symmetric matrix from one triangle.
    if std::ptr::eq(xs.as_ptr() as *const u8, zs.as_ptr() as *const u8) && xs.len() == zs.len() {
        return Ok(gram_sym_unchecked(kernel, xs));
    }
    Ok(DMatrix::from_fn(xs.len(), zs.len(), |i, j| kernel.value(xs[i].as_ref(), zs[j].as_ref())))
}

/// Symmetric Gram matrix `K(X_i, X_j)`, each unordered pair evaluated once.
pub fn gram_sym<P: AsRef<[f64]>>(kernel: &ScalarKernelSpec, xs: &[P]) -> Result<DMatrix<f64>> {
    gram(kernel, xs, xs)
}

pub(crate) fn gram_sym_unchecked<P: AsRef<[f64]>>(kernel: &ScalarKernelSpec, xs: &[P]) -> DMatrix<f64> {
    let n = xs.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kernel.value(xs[i].as_ref(), xs[j].as_ref());
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Coefficients of the kernel interpolant: `M_{X,X} α = y`.
pub fn solve_interpolation<P: AsRef<[f64]>>(kernel: &ScalarKernelSpec, xs: &[P], y: &[f64]) -> Result<DVector<f64>> {
    check_dim(xs.len(), y.len())?;
    let m = gram_sym(kernel, xs)?;
    Ok(spd_solve_vec(&m, &DVector::from_column_slice(y), &SpdSolvePolicy::default())?.0)
}

/// Coefficients of kernel ridge regression: `(M_{X,X} + λI) α = y`.
pub fn solve_ridge<P: AsRef<[f64]>>(kernel: &ScalarKernelSpec, xs: &[P], y: &[f64], lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::arg(format!("ridge parameter must be positive, got {lambda}")));
    }
    check_dim(xs.len(), y.len())?;
    let mut m = gram_sym(kernel, xs)?;
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    Ok(spd_solve_vec(&m, &DVector::from_column_slice(y), &SpdSolvePolicy::default())?.0)
}

/// `yᵀ M⁻¹ y`, computed through a solve rather than an explicit inverse.
pub fn energy_quadratic_form(m: &DMatrix<f64>, y: &DVector<f64>, policy: &SpdSolvePolicy) -> Result<f64> {
    let (x, _) = spd_solve_vec(m, y, policy)?;
    Ok(y.dot(&x))
}
