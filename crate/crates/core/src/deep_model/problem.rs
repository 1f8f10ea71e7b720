//! The finite-dimensional two-layer problems in the inner coefficients `c`.
//!
//! With `g(x) = Σ_j 𝑲(x_j, x) c_j` and `Q = [K(g(x_n), g(x_m))]`:
//!
//! * interpolation: `yᵀQ⁻¹y + 𝒩(c) (+ coth penalty)`
//! * regression: `λ αᵀQα + μ 𝒩(c) + ‖y − Qα‖²` with `α = (Q + λI)⁻¹y`
//!
//! Coefficients are flattened row-major, `c[j·D + ℓ]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gram::{gram, gram_sym, SpdFactor, SpdSolvePolicy};
use crate::kernels::{sq_dist, MatrixKernelSpec, ScalarKernelSpec};
use crate::optimize::{Objective, SENTINEL};

/// `g(x) = Σ_j 𝑲(x_j, x) c_j` for coefficients `c` stored row-major `N × D`.
pub fn inner_eval(c: &[f64], inner: &MatrixKernelSpec, centers: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
    let d_out = inner.output_dim();
    check_dim(centers.len() * d_out, c.len())?;
    check_dim(inner.input_dim(), x.len())?;
    let mut out = vec![0.0; d_out];
    for (j, xj) in centers.iter().enumerate() {
        check_dim(inner.input_dim(), xj.len())?;
        let diag = inner.eval_diag(xj, x)?;
        for (l, k) in diag.iter().enumerate() {
            out[l] += k * c[j * d_out + l];
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Interpolation,
    Regression { lambda: f64, mu: f64 },
}

impl Mode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Mode::Interpolation => Ok(()),
            Mode::Regression { lambda, mu } => {
                if lambda > 0.0 && lambda.is_finite() && mu >= 0.0 && mu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::arg(format!("regression needs lambda > 0 and mu >= 0, got ({lambda}, {mu})")))
                }
            }
        }
    }

    /// `(λ, μ)`, with `(0, 0)` for interpolation.
    pub fn lambda_mu(&self) -> (f64, f64) {
        match *self {
            Mode::Interpolation => (0.0, 0.0),
            Mode::Regression { lambda, mu } => (lambda, mu),
        }
    }
}

/// Objective value and gradient at one `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// Empty when only the value was requested.
    pub grad: Vec<f64>,
    /// True when the value is the sentinel; the gradient is then zero.
    pub singular: bool,
}

/// Training data and kernels for the two-layer problem.
///
/// The inner function may use support centres other than the data points;
/// by default they coincide.
#[derive(Clone, Debug)]
pub struct TwoLayerProblem {
    xs: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    y: DVector<f64>,
    inner: MatrixKernelSpec,
    outer: ScalarKernelSpec,
    gamma: f64,
    policy: SpdSolvePolicy,
    /// Per channel, `w_ℓ K_ℓ(centre_j, x_n)` (centres × data).
    cross: Vec<DMatrix<f64>>,
    /// Per channel, `w_ℓ K_ℓ(centre_j, centre_k)`.
    center_gram: Vec<DMatrix<f64>>,
}

impl TwoLayerProblem {
    pub fn new(xs: &[Vec<f64>], y: &[f64], inner: MatrixKernelSpec, outer: ScalarKernelSpec) -> Result<Self> {
        Self::with_centers(xs, xs, y, inner, outer)
    }

    pub fn with_centers(
        xs: &[Vec<f64>],
        centers: &[Vec<f64>],
        y: &[f64],
        inner: MatrixKernelSpec,
        outer: ScalarKernelSpec,
    ) -> Result<Self> {
        if xs.is_empty() || centers.is_empty() {
            return Err(Error::arg("need at least one sample and one centre"));
        }
        check_dim(xs.len(), y.len())?;
        check_dim(inner.output_dim(), outer.dim())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("targets must be finite"));
        }
        let same = std::ptr::eq(xs, centers) || xs == centers;
        let mut cross = Vec::with_capacity(inner.output_dim());
        let mut center_gram = Vec::with_capacity(inner.output_dim());
        for l in 0..inner.output_dim() {
            let (k, w) = inner.channel(l);
            let g = if same { gram_sym(k, centers)? } else { gram(k, centers, xs)? } * w;
            let c = if same { g.clone() } else { gram_sym(k, centers)? * w };
            cross.push(g);
            center_gram.push(c);
        }
        Ok(Self {
            xs: xs.to_vec(),
            centers: centers.to_vec(),
            y: DVector::from_column_slice(y),
            inner,
            outer,
            gamma: 0.0,
            policy: SpdSolvePolicy::default(),
            cross,
            center_gram,
        })
    }

    /// Weight of the coth separation penalty (default 0).
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::arg(format!("gamma must be >= 0, got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_policy(mut self, policy: SpdSolvePolicy) -> Result<Self> {
        policy.validate()?;
        self.policy = policy;
        Ok(self)
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn inner(&self) -> &MatrixKernelSpec {
        &self.inner
    }

    pub fn outer(&self) -> &ScalarKernelSpec {
        &self.outer
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn policy(&self) -> &SpdSolvePolicy {
        &self.policy
    }

    pub fn n_samples(&self) -> usize {
        self.xs.len()
    }

    pub fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    /// Length of the coefficient vector, `centres × D`.
    pub fn n_params(&self) -> usize {
        self.centers.len() * self.output_dim()
    }

    /// True when the centres are the data points.
    pub fn centers_are_data(&self) -> bool {
        self.centers == self.xs
    }

    fn check_c(&self, c: &[f64]) -> Result<()> {
        check_dim(self.n_params(), c.len())?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("coefficients must be finite"));
        }
        Ok(())
    }

    /// `g(x_n)` for every data point, row-major `N × D`.
    fn images_flat(&self, c: &[f64]) -> Vec<f64> {
        let (n, d_out) = (self.n_samples(), self.output_dim());
        let mut z = vec![0.0; n * d_out];
        for (l, g) in self.cross.iter().enumerate() {
            for m in 0..n {
                let mut acc = 0.0;
                for j in 0..g.nrows() {
                    acc += g[(j, m)] * c[j * d_out + l];
                }
                z[m * d_out + l] = acc;
            }
        }
        z
    }

    /// `g(x_n)` for every data point.
    pub fn inner_images(&self, c: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_c(c)?;
        Ok(self.images_flat(c).chunks(self.output_dim()).map(<[f64]>::to_vec).collect())
    }

    /// `g(x)` at an arbitrary point.
    pub fn inner_eval(&self, c: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_c(c)?;
        inner_eval(c, &self.inner, &self.centers, x)
    }

    fn q_from_images(&self, z: &[f64]) -> DMatrix<f64> {
        let (n, d_out) = (self.n_samples(), self.output_dim());
        let mut q = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..=a {
                let v = self.outer.value(&z[a * d_out..(a + 1) * d_out], &z[b * d_out..(b + 1) * d_out]);
                q[(a, b)] = v;
                q[(b, a)] = v;
            }
        }
        q
    }

    /// `Q[n, m] = K(g(x_n), g(x_m))`.
    pub fn q_matrix(&self, c: &[f64]) -> Result<DMatrix<f64>> {
        self.check_c(c)?;
        Ok(self.q_from_images(&self.images_flat(c)))
    }

    fn norm_sq_unchecked(&self, c: &[f64]) -> f64 {
        let d_out = self.output_dim();
        let mut total = 0.0;
        for (l, g) in self.center_gram.iter().enumerate() {
            let cl = DVector::from_iterator(self.centers.len(), (0..self.centers.len()).map(|j| c[j * d_out + l]));
            total += cl.dot(&(g * &cl));
        }
        total
    }

    /// `𝒩(c) = Σ_{j,k} c_jᵀ 𝑲(x_j, x_k) c_k`.
    pub fn inner_norm_sq(&self, c: &[f64]) -> Result<f64> {
        self.check_c(c)?;
        Ok(self.norm_sq_unchecked(c))
    }

    /// The `ND × ND` matrix of blocks `𝑲(x_j, x_k)`, indexed like `c`.
    pub fn block_gram(&self) -> DMatrix<f64> {
        let (m, d_out) = (self.centers.len(), self.output_dim());
        let mut b = DMatrix::zeros(m * d_out, m * d_out);
        for (l, g) in self.center_gram.iter().enumerate() {
            for j in 0..m {
                for k in 0..m {
                    b[(j * d_out + l, k * d_out + l)] = g[(j, k)];
                }
            }
        }
        b
    }

    /// `γ Σ_{m<n} coth(‖g(x_m) − g(x_n)‖²)`; coincident images give the sentinel.
    pub fn penalty_coth(&self, c: &[f64]) -> Result<f64> {
        self.check_c(c)?;
        if self.gamma == 0.0 {
            return Ok(0.0);
        }
        Ok(self.penalty(&self.images_flat(c), None))
    }

    /// Penalty value; accumulates `∂P/∂z` into `gz` when given.
    fn penalty(&self, z: &[f64], mut gz: Option<&mut [f64]>) -> f64 {
        let (n, d_out) = (self.n_samples(), self.output_dim());
        let mut total = 0.0;
        for a in 0..n {
            let za = &z[a * d_out..(a + 1) * d_out];
            for b in 0..a {
                let zb = &z[b * d_out..(b + 1) * d_out];
                let t = sq_dist(za, zb);
                if t == 0.0 {
                    return SENTINEL;
                }
                total += 1.0 / t.tanh();
                if let Some(gz) = gz.as_deref_mut() {
                    let s = t.sinh();
                    let coef = -2.0 * self.gamma / (s * s);
                    for l in 0..d_out {
                        let v = coef * (za[l] - zb[l]);
                        gz[a * d_out + l] += v;
                        gz[b * d_out + l] -= v;
                    }
                }
            }
        }
        self.gamma * total
    }

    fn sentinel(&self, want_grad: bool) -> Evaluation {
        Evaluation { value: SENTINEL, grad: if want_grad { vec![0.0; self.n_params()] } else { Vec::new() }, singular: true }
    }

    /// Objective of `mode` at `c`, with the gradient when `want_grad`.
    pub fn evaluate(&self, c: &[f64], mode: Mode, want_grad: bool) -> Result<Evaluation> {
        self.check_c(c)?;
        mode.validate()?;
        Ok(self.evaluate_unchecked(c, mode, want_grad))
    }

    fn evaluate_unchecked(&self, c: &[f64], mode: Mode, want_grad: bool) -> Evaluation {
        let (n, d_out) = (self.n_samples(), self.output_dim());
        let z = self.images_flat(c);
        if z.iter().any(|v| !v.is_finite()) {
            return self.sentinel(want_grad);
        }

        // Q and, when needed, every ∇₂K(z_a, z_b) (stored at (a, b)).
        let mut q = DMatrix::zeros(n, n);
        let mut dk = if want_grad { vec![0.0; n * n * d_out] } else { Vec::new() };
        for a in 0..n {
            let za = &z[a * d_out..(a + 1) * d_out];
            for b in 0..n {
                if !want_grad && b > a {
                    break;
                }
                let zb = &z[b * d_out..(b + 1) * d_out];
                let v = if want_grad {
                    let off = (a * n + b) * d_out;
                    self.outer.value_and_grad2(za, zb, &mut dk[off..off + d_out])
                } else {
                    self.outer.value(za, zb)
                };
                if b <= a {
                    q[(a, b)] = v;
                    q[(b, a)] = v;
                }
            }
        }

        let (lambda, mu) = match mode {
            Mode::Interpolation => (0.0, 1.0),
            Mode::Regression { lambda, mu } => (lambda, mu),
        };
        let mut shifted = q.clone();
        for i in 0..n {
            shifted[(i, i)] += lambda;
        }
        let Ok(factor) = SpdFactor::new(&shifted, &self.policy) else {
            return self.sentinel(want_grad);
        };
        let sol = factor.solve_vec(&self.y);

        // w is chosen so that the data term's differential is −wᵀ dQ w.
        let (data_term, w) = match mode {
            Mode::Interpolation => (self.y.dot(&sol), sol),
            // y − Qα = λα, so λαᵀQα + ‖y − Qα‖² collapses to λyᵀα without the cancelling residual.
            Mode::Regression { .. } => (lambda * self.y.dot(&sol), sol * lambda.sqrt()),
        };

        let mut gz = if want_grad { vec![0.0; n * d_out] } else { Vec::new() };
        let penalty = if self.gamma > 0.0 {
            self.penalty(&z, want_grad.then_some(gz.as_mut_slice()))
        } else {
            0.0
        };
        let value = data_term + mu * self.norm_sq_unchecked(c) + penalty;
        if !value.is_finite() || value >= SENTINEL {
            return self.sentinel(want_grad);
        }
        if !want_grad {
            return Evaluation { value, grad: Vec::new(), singular: false };
        }

        // ∂/∂z_p of −wᵀQw: −2 w_p Σ_m w_m ∇₂K(z_m, z_p).
        for p in 0..n {
            let scale = -2.0 * w[p];
            for m in 0..n {
                let off = (m * n + p) * d_out;
                let wm = scale * w[m];
                for l in 0..d_out {
                    gz[p * d_out + l] += wm * dk[off + l];
                }
            }
        }

        let m_centers = self.centers.len();
        let mut grad = vec![0.0; self.n_params()];
        for l in 0..d_out {
            let g = &self.cross[l];
            let cg = &self.center_gram[l];
            for j in 0..m_centers {
                let mut acc = 0.0;
                for p in 0..n {
                    acc += g[(j, p)] * gz[p * d_out + l];
                }
                let mut norm = 0.0;
                for k in 0..m_centers {
                    norm += cg[(j, k)] * c[k * d_out + l];
                }
                grad[j * d_out + l] = acc + 2.0 * mu * norm;
            }
        }
        Evaluation { value, grad, singular: false }
    }

    /// Interpolation objective `yᵀQ⁻¹y + 𝒩(c) + P(c)`.
    pub fn objective_interp(&self, c: &[f64]) -> Result<f64> {
        Ok(self.evaluate(c, Mode::Interpolation, false)?.value)
    }

    /// Regression objective `λ yᵀAQAy + μ𝒩(c) + ‖(I − QA)y‖² + P(c)`.
    pub fn objective_reg(&self, c: &[f64], lambda: f64, mu: f64) -> Result<f64> {
        Ok(self.evaluate(c, Mode::Regression { lambda, mu }, false)?.value)
    }

    pub fn grad_objective_interp(&self, c: &[f64]) -> Result<Evaluation> {
        self.evaluate(c, Mode::Interpolation, true)
    }

    pub fn grad_objective_reg(&self, c: &[f64], lambda: f64, mu: f64) -> Result<Evaluation> {
        self.evaluate(c, Mode::Regression { lambda, mu }, true)
    }

    /// Outer coefficients solving `(Q + λI)α = y`; `λ = 0` interpolates.
    pub fn outer_fit(&self, c: &[f64], lambda: f64) -> Result<DVector<f64>> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::arg(format!("lambda must be >= 0, got {lambda}")));
        }
        let mut m = self.q_matrix(c)?;
        for i in 0..m.nrows() {
            m[(i, i)] += lambda;
        }
        Ok(SpdFactor::new(&m, &self.policy)?.solve_vec(&self.y))
    }

    /// This problem in `mode` as an optimiser objective.
    pub fn objective(&self, mode: Mode) -> Result<TwoLayerObjective<'_>> {
        mode.validate()?;
        Ok(TwoLayerObjective { problem: self, mode })
    }
}

/// Borrowing adapter from [`TwoLayerProblem`] to [`Objective`].
#[derive(Clone, Copy, Debug)]
pub struct TwoLayerObjective<'a> {
    problem: &'a TwoLayerProblem,
    mode: Mode,
}

impl TwoLayerObjective<'_> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl Objective for TwoLayerObjective<'_> {
    fn value(&self, c: &[f64]) -> f64 {
        if c.len() != self.problem.n_params() || c.iter().any(|v| !v.is_finite()) {
            return SENTINEL;
        }
        self.problem.evaluate_unchecked(c, self.mode, false).value
    }

    fn value_grad(&self, c: &[f64]) -> (f64, Vec<f64>) {
        if c.len() != self.problem.n_params() || c.iter().any(|v| !v.is_finite()) {
            return (SENTINEL, vec![0.0; c.len()]);
        }
        let e = self.problem.evaluate_unchecked(c, self.mode, true);
        (e.value, e.grad)
    }
}
