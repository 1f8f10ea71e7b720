//! Scalar and diagonal matrix-valued kernels.
//!
//! Three scalar families are provided, all evaluated exactly as written
//! (no normalisation):
//!
//! * polynomial `(xᵀy + 1)^p`
//! * Gaussian `exp(-‖x - y‖² / (2σ²))`
//! * tensor-product Matérn `∏ᵢ κ_ν(|xᵢ - yᵢ|)·|xᵢ - yᵢ|^ν` with `ν = s - 1/2`
//!
//! The Matérn factor is a polynomial times `e^{-r}` for half-integer orders,
//! which is how it is evaluated here. That form is finite at `r = 0` and
//! gives the continuous extension of the product formula.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Kernel family with its shape parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Poly { p: u32 },
    Gauss { sigma: f64 },
    TensorMatern { s: u32 },
}

impl KernelFamily {
    fn validate(&self) -> Result<()> {
        match *self {
            KernelFamily::Poly { p } if p < 1 => Err(Error::arg("polynomial degree p must be >= 1")),
            KernelFamily::Gauss { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::arg(format!("gaussian width sigma must be positive, got {sigma}")))
            }
            KernelFamily::TensorMatern { s } if s < 1 => Err(Error::arg("matern order s must be >= 1")),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::Poly { p } => write!(f, "poly(p={p})"),
            KernelFamily::Gauss { sigma } => write!(f, "gauss(sigma={sigma})"),
            KernelFamily::TensorMatern { s } => write!(f, "tensor_matern(s={s})"),
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    /// Parses the `Display` form, e.g. `gauss(sigma=0.1)`.
    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let bad = || Error::Config(format!("cannot parse kernel '{text}'"));
        let open = text.find('(').ok_or_else(bad)?;
        if !text.ends_with(')') {
            return Err(bad());
        }
        let name = &text[..open];
        let (key, value) = text[open + 1..text.len() - 1].split_once('=').ok_or_else(bad)?;
        let family = match (name.trim(), key.trim()) {
            ("poly", "p") => KernelFamily::Poly { p: value.trim().parse().map_err(|_| bad())? },
            ("gauss", "sigma") => KernelFamily::Gauss { sigma: value.trim().parse().map_err(|_| bad())? },
            ("tensor_matern", "s") => KernelFamily::TensorMatern { s: value.trim().parse().map_err(|_| bad())? },
            _ => return Err(bad()),
        };
        family.validate()?;
        Ok(family)
    }
}

/// A positive-definite scalar kernel on `ℝ^dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarKernelSpec {
    family: KernelFamily,
    dim: usize,
}

impl ScalarKernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        family.validate()?;
        if dim == 0 {
            return Err(Error::arg("kernel dimension must be >= 1"));
        }
        Ok(Self { family, dim })
    }

    pub fn poly(p: u32, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Poly { p }, dim)
    }

    pub fn gauss(sigma: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gauss { sigma }, dim)
    }

    pub fn tensor_matern(s: u32, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::TensorMatern { s }, dim)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same family on a different input dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Self::new(self.family, dim)
    }

    fn check_args(&self, x: &[f64], y: &[f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::arg("kernel arguments must be finite"));
        }
        Ok(())
    }

    /// `K(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_args(x, y)?;
        Ok(self.value(x, y))
    }

    /// Gradient of `K(x, y)` with respect to `y`.
    pub fn grad2(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_args(x, y)?;
        let mut out = vec![0.0; self.dim];
        self.value_and_grad2(x, y, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation for inner loops; lengths are debug-asserted.
    #[inline]
    pub(crate) fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.family {
            KernelFamily::Poly { p } => (dot(x, y) + 1.0).powi(p as i32),
            KernelFamily::Gauss { sigma } => (-0.5 * sq_dist(x, y) / (sigma * sigma)).exp(),
            KernelFamily::TensorMatern { s } => {
                let n = s - 1;
                x.iter().zip(y).map(|(a, b)| matern_factor(n, (a - b).abs())).product()
            }
        }
    }

    /// Writes `∇_y K(x, y)` into `grad` and returns `K(x, y)`.
    pub(crate) fn value_and_grad2(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), grad.len());
        match self.family {
            KernelFamily::Poly { p } => {
                let base = dot(x, y) + 1.0;
                let scale = p as f64 * base.powi(p as i32 - 1);
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g = scale * xi;
                }
                base.powi(p as i32)
            }
            KernelFamily::Gauss { sigma } => {
                let inv = 1.0 / (sigma * sigma);
                let k = (-0.5 * sq_dist(x, y) / (sigma * sigma)).exp();
                for ((g, xi), yi) in grad.iter_mut().zip(x).zip(y) {
                    *g = k * (xi - yi) * inv;
                }
                k
            }
            KernelFamily::TensorMatern { s } => {
                let n = s - 1;
                let d = x.len();
                // d is tiny, so the O(d²) leave-one-out products are fine and
                // avoid dividing by underflowed factors.
                let mut factors = [0.0f64; 8];
                let mut derivs = [0.0f64; 8];
                let mut heap_f;
                let mut heap_d;
                let (fs, ds): (&mut [f64], &mut [f64]) = if d <= 8 {
                    (&mut factors[..d], &mut derivs[..d])
                } else {
                    heap_f = vec![0.0; d];
                    heap_d = vec![0.0; d];
                    (&mut heap_f[..], &mut heap_d[..])
                };
                for i in 0..d {
                    let diff = y[i] - x[i];
                    let r = diff.abs();
                    fs[i] = matern_factor(n, r);
                    // Kink at r = 0 (only for s = 1): take the symmetric subgradient 0.
                    ds[i] = if r == 0.0 { 0.0 } else { matern_factor_deriv(n, r) * diff.signum() };
                }
                for i in 0..d {
                    let rest: f64 = (0..d).filter(|&j| j != i).map(|j| fs[j]).product();
                    grad[i] = ds[i] * rest;
                }
                fs.iter().product()
            }
        }
    }

    /// True when `K(z₁, z₂) = a(‖z₁ - z₂‖)` for a radial profile `a`.
    pub fn is_radial(&self) -> bool {
        match self.family {
            KernelFamily::Gauss { .. } => true,
            KernelFamily::TensorMatern { .. } => self.dim == 1,
            KernelFamily::Poly { .. } => false,
        }
    }

    /// Radial profile `a(r)`; `None` for non-radial kernels.
    pub fn radial_profile(&self, r: f64) -> Option<f64> {
        if !self.is_radial() {
            return None;
        }
        Some(match self.family {
            KernelFamily::Gauss { sigma } => (-r * r / (2.0 * sigma * sigma)).exp(),
            KernelFamily::TensorMatern { s } => matern_factor(s - 1, r.abs()),
            KernelFamily::Poly { .. } => unreachable!(),
        })
    }
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Coefficient of `r^m` in the polynomial `P_n` with
/// `κ_{n+1/2}(r)·r^{n+1/2} = √(π/2)·e^{-r}·P_n(r)`.
///
/// From the closed form `K_{n+1/2}(r) = √(π/2r) e^{-r} Σ_k (n+k)!/(k!(n-k)!) (2r)^{-k}`,
/// the `k`-th term contributes to power `m = n - k`.
fn matern_poly_coeff(n: u32, m: u32) -> f64 {
    let k = n - m;
    let fact = |v: u32| (1..=v).map(f64::from).product::<f64>();
    fact(n + k) / (fact(k) * fact(n - k)) / 2f64.powi(k as i32)
}

fn matern_poly(n: u32, r: f64) -> (f64, f64) {
    // Horner for value and derivative.
    let mut p = 0.0;
    let mut dp = 0.0;
    for m in (0..=n).rev() {
        dp = dp * r + p;
        p = p * r + matern_poly_coeff(n, m);
    }
    (p, dp)
}

/// `κ_{n+1/2}(r)·r^{n+1/2}`, extended continuously to `r = 0`.
pub(crate) fn matern_factor(n: u32, r: f64) -> f64 {
    let (p, _) = matern_poly(n, r);
    (PI / 2.0).sqrt() * (-r).exp() * p
}

/// Derivative of [`matern_factor`] in `r` (one-sided from the right at 0).
pub(crate) fn matern_factor_deriv(n: u32, r: f64) -> f64 {
    let (p, dp) = matern_poly(n, r);
    (PI / 2.0).sqrt() * (-r).exp() * (dp - p)
}

/// Value of the univariate Matérn factor at coincidence, `2^{(2s-3)/2}·Γ((2s-1)/2)`.
pub fn matern_limit_at_zero(s: u32) -> f64 {
    matern_factor(s - 1, 0.0)
}

/// Modified Bessel function of the second kind `K_{n+1/2}(r)` for `r > 0`.
///
/// Starts from `K_{±1/2}(r) = √(π/(2r))·e^{-r}` and runs the upward
/// recurrence `K_{ν+1} = K_{ν-1} + (2ν/r)·K_ν`, which is stable for `K`.
pub fn bessel_k_half(n: u32, r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::arg(format!("bessel_k_half needs a finite r > 0, got {r}")));
    }
    let k_half = (PI / (2.0 * r)).sqrt() * (-r).exp();
    let mut prev = k_half; // K_{-1/2}
    let mut cur = k_half; // K_{1/2}
    for j in 0..n {
        let nu = j as f64 + 0.5;
        let next = prev + 2.0 * nu / r * cur;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Diagonal matrix-valued kernel `Ω × Ω → ℝ^{D×D}`.
#[derive(Clone, Debug, PartialEq)]
pub enum MatrixKernelSpec {
    /// `K_I(x, y)·diag(a)`.
    DiagScaled { scalar: ScalarKernelSpec, weights: Vec<f64> },
    /// `diag(K₁(x, y), …, K_D(x, y))`.
    DiagMixture { components: Vec<ScalarKernelSpec> },
}

impl MatrixKernelSpec {
    pub fn diag_scaled(scalar: ScalarKernelSpec, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::arg("diag_scaled needs at least one weight"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::arg("diag_scaled weights must be positive"));
        }
        Ok(Self::DiagScaled { scalar, weights })
    }

    pub fn diag_mixture(components: Vec<ScalarKernelSpec>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::arg("diag_mixture needs at least one component"))?;
        let dim = first.dim();
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        Ok(Self::DiagMixture { components })
    }

    /// Number of outputs `D`.
    pub fn output_dim(&self) -> usize {
        match self {
            Self::DiagScaled { weights, .. } => weights.len(),
            Self::DiagMixture { components } => components.len(),
        }
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        match self {
            Self::DiagScaled { scalar, .. } => scalar.dim(),
            Self::DiagMixture { components } => components[0].dim(),
        }
    }

    /// Same kernel on another input dimension.
    pub fn with_input_dim(&self, dim: usize) -> Result<Self> {
        Ok(match self {
            Self::DiagScaled { scalar, weights } => Self::DiagScaled { scalar: scalar.with_dim(dim)?, weights: weights.clone() },
            Self::DiagMixture { components } => Self::DiagMixture {
                components: components.iter().map(|c| c.with_dim(dim)).collect::<Result<_>>()?,
            },
        })
    }

    /// The scalar kernel and weight defining diagonal entry `l`.
    pub fn channel(&self, l: usize) -> (&ScalarKernelSpec, f64) {
        match self {
            Self::DiagScaled { scalar, weights } => (scalar, weights[l]),
            Self::DiagMixture { components } => (&components[l], 1.0),
        }
    }

    /// The diagonal of `𝑲(x, y)`.
    pub fn eval_diag(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::DiagScaled { scalar, weights } => {
                let k = scalar.eval(x, y)?;
                Ok(weights.iter().map(|w| k * w).collect())
            }
            Self::DiagMixture { components } => components.iter().map(|c| c.eval(x, y)).collect(),
        }
    }

    /// `𝑲(x, y)` as a dense `D × D` matrix.
    pub fn eval_matrix(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let diag = self.eval_diag(x, y)?;
        Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)))
    }
}
