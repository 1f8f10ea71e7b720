use nalgebra::DVector;

use super::problem::{inner_eval, Mode, TwoLayerProblem};
use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelFamily, MatrixKernelSpec, ScalarKernelSpec};
use crate::optimize::{multistart, BfgsConfig, OptimizationResult};

/// A fitted `f ∘ g` with `g ∈ V_X` and `f = Σ_j α_j K(g(x_j), ·)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerModel {
    xs: Vec<Vec<f64>>,
    inner: MatrixKernelSpec,
    outer: ScalarKernelSpec,
    c: Vec<f64>,
    alpha: DVector<f64>,
    lambda: f64,
    mu: f64,
    gamma: f64,
    objective_value: f64,
    /// `g(x_j)`, cached.
    images: Vec<Vec<f64>>,
}

impl TwoLayerModel {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        xs: Vec<Vec<f64>>,
        inner: MatrixKernelSpec,
        outer: ScalarKernelSpec,
        c: Vec<f64>,
        alpha: Vec<f64>,
        lambda: f64,
        mu: f64,
        gamma: f64,
        objective_value: f64,
    ) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::arg("model needs at least one centre"));
        }
        check_dim(inner.output_dim(), outer.dim())?;
        check_dim(xs.len(), alpha.len())?;
        let interp = lambda == 0.0 && mu == 0.0;
        if !interp && !(lambda > 0.0 && mu >= 0.0) {
            return Err(Error::arg(format!("inconsistent (lambda, mu) = ({lambda}, {mu})")));
        }
        let images = xs.iter().map(|x| inner_eval(&c, &inner, &xs, x)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            xs,
            inner,
            outer,
            c,
            alpha: DVector::from_vec(alpha),
            lambda,
            mu,
            gamma,
            objective_value,
            images,
        })
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn inner(&self) -> &MatrixKernelSpec {
        &self.inner
    }

    pub fn outer(&self) -> &ScalarKernelSpec {
        &self.outer
    }

    /// Inner coefficients, row-major `N × D`.
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn objective_value(&self) -> f64 {
        self.objective_value
    }

    pub fn mode(&self) -> Mode {
        if self.lambda == 0.0 {
            Mode::Interpolation
        } else {
            Mode::Regression { lambda: self.lambda, mu: self.mu }
        }
    }

    /// The inner map `g(x)`.
    pub fn inner_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        inner_eval(&self.c, &self.inner, &self.xs, x)
    }

    /// Images `g(x_j)` of the centres.
    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    /// `f(g(x))` using the cached centre images.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let z = self.inner_map(x)?;
        Ok(self.images.iter().zip(self.alpha.iter()).map(|(zj, a)| a * self.outer.value(zj, &z)).sum())
    }

    /// The composition kernel `K(g(x), g(y))`.
    pub fn composition_kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.outer.value(&self.inner_map(x)?, &self.inner_map(y)?))
    }

    /// `Σ_j α_j K(g(x_j), g(x))`, recomputing every `g(x_j)`.
    pub fn predict_composed(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (xj, a) in self.xs.iter().zip(self.alpha.iter()) {
            total += a * self.composition_kernel(xj, x)?;
        }
        Ok(total)
    }

    /// Flat `key=value` text record; see [`TwoLayerModel::from_text`].
    ///
    /// Keys, in order: `format`, `n`, `d`, `outer`, `inner.kind`, then
    /// `inner.kernel` and `inner.weights` or `inner.components`, then
    /// `lambda`, `mu`, `gamma`, `objective`, `x` (rows split by `;`),
    /// `c` (row-major) and `alpha`. Floats use the shortest round-trip form.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        out.push_str(&format!("format={FORMAT_TAG}\n"));
        out.push_str(&format!("n={}\n", self.xs.len()));
        out.push_str(&format!("d={}\n", self.inner.input_dim()));
        out.push_str(&format!("outer={}\n", self.outer.family()));
        match &self.inner {
            MatrixKernelSpec::DiagScaled { scalar, weights } => {
                out.push_str("inner.kind=diag_scaled\n");
                out.push_str(&format!("inner.kernel={}\n", scalar.family()));
                out.push_str(&format!("inner.weights={}\n", join(weights)));
            }
            MatrixKernelSpec::DiagMixture { components } => {
                out.push_str("inner.kind=diag_mixture\n");
                let names: Vec<String> = components.iter().map(|k| k.family().to_string()).collect();
                out.push_str(&format!("inner.components={}\n", names.join(";")));
            }
        }
        out.push_str(&format!("lambda={}\n", self.lambda));
        out.push_str(&format!("mu={}\n", self.mu));
        out.push_str(&format!("gamma={}\n", self.gamma));
        out.push_str(&format!("objective={}\n", self.objective_value));
        let rows: Vec<String> = self.xs.iter().map(|r| join(r)).collect();
        out.push_str(&format!("x={}\n", rows.join(";")));
        out.push_str(&format!("c={}\n", join(&self.c)));
        out.push_str(&format!("alpha={}\n", join(self.alpha.as_slice())));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields: Vec<(usize, &str, &str)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse { line: i + 1, msg: "expected key=value".into() })?;
            fields.push((i + 1, k.trim(), v.trim()));
        }
        let get = |key: &str| -> Result<(usize, &str)> {
            fields
                .iter()
                .find(|(_, k, _)| *k == key)
                .map(|(l, _, v)| (*l, *v))
                .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing key '{key}'") })
        };
        let float = |key: &str| -> Result<f64> {
            let (line, v) = get(key)?;
            v.parse().map_err(|_| Error::Parse { line, msg: format!("bad number for '{key}'") })
        };
        let floats = |line: usize, v: &str| -> Result<Vec<f64>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|t| t.trim().parse().map_err(|_| Error::Parse { line, msg: format!("bad number '{t}'") }))
                .collect()
        };
        let family = |key: &str| -> Result<KernelFamily> {
            let (line, v) = get(key)?;
            v.parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })
        };

        let (line, tag) = get("format")?;
        if tag != FORMAT_TAG {
            return Err(Error::Parse { line, msg: format!("unknown format '{tag}'") });
        }
        let (line, d) = get("d")?;
        let d: usize = d.parse().map_err(|_| Error::Parse { line, msg: "bad input dimension".into() })?;
        let (line, kind) = get("inner.kind")?;
        let inner = match kind {
            "diag_scaled" => {
                let scalar = ScalarKernelSpec::new(family("inner.kernel")?, d)?;
                let (wl, w) = get("inner.weights")?;
                MatrixKernelSpec::diag_scaled(scalar, floats(wl, w)?)?
            }
            "diag_mixture" => {
                let (cl, comps) = get("inner.components")?;
                let components = comps
                    .split(';')
                    .map(|t| {
                        let f: KernelFamily = t.parse().map_err(|e: Error| Error::Parse { line: cl, msg: e.to_string() })?;
                        ScalarKernelSpec::new(f, d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                MatrixKernelSpec::diag_mixture(components)?
            }
            other => return Err(Error::Parse { line, msg: format!("unknown inner kind '{other}'") }),
        };
        let outer = ScalarKernelSpec::new(family("outer")?, inner.output_dim())?;

        let (xl, xv) = get("x")?;
        let xs = xv.split(';').map(|row| floats(xl, row)).collect::<Result<Vec<_>>>()?;
        for row in &xs {
            if row.len() != d {
                return Err(Error::Parse { line: xl, msg: format!("row of length {} in dimension {d}", row.len()) });
            }
        }
        let (nl, n) = get("n")?;
        if n.parse::<usize>().ok() != Some(xs.len()) {
            return Err(Error::Parse { line: nl, msg: "n does not match the number of rows".into() });
        }
        let (cl, cv) = get("c")?;
        let c = floats(cl, cv)?;
        if c.len() != xs.len() * inner.output_dim() {
            return Err(Error::Parse { line: cl, msg: "coefficient count does not match n·D".into() });
        }
        let (al, av) = get("alpha")?;
        let alpha = floats(al, av)?;
        Self::from_parts(xs, inner, outer, c, alpha, float("lambda")?, float("mu")?, float("gamma")?, float("objective")?)
    }
}

const FORMAT_TAG: &str = "deepkern-two-layer-v1";

/// Multistart BFGS over `c`, then the outer coefficients at the best `c`.
pub fn fit_two_layer(problem: &TwoLayerProblem, mode: Mode, config: &BfgsConfig) -> Result<(TwoLayerModel, OptimizationResult)> {
    if !problem.centers_are_data() {
        return Err(Error::arg("fitting a model needs the centres to be the data points"));
    }
    let objective = problem.objective(mode)?;
    let best = multistart(&objective, problem.n_params(), config)?;
    let (lambda, mu) = mode.lambda_mu();
    let alpha = problem.outer_fit(&best.c_best, lambda)?;
    let model = TwoLayerModel::from_parts(
        problem.xs().to_vec(),
        problem.inner().clone(),
        *problem.outer(),
        best.c_best.clone(),
        alpha.as_slice().to_vec(),
        lambda,
        mu,
        problem.gamma(),
        best.objective,
    )?;
    Ok((model, best))
}
