//! Dense BFGS with a strong-Wolfe line search, a seeded multistart driver,
//! and finite-difference gradient checks.
//!
//! Objectives may return [`SENTINEL`] to mark points where they are not
//! defined (e.g. a singular Gram matrix). The line search treats such trials
//! as failing the sufficient-decrease test, so the step shrinks.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Finite stand-in for an infinite objective value.
pub const SENTINEL: f64 = 1e12;

/// Something BFGS can minimise.
pub trait Objective: Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// Value and gradient at `x`; implementations should share work between the two.
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Adapts a pair of closures to [`Objective`].
pub struct FnObjective<F, G> {
    f: F,
    g: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(f: F, g: G) -> Self {
        Self { f, g }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        ((self.f)(x), (self.g)(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BfgsConfig {
    pub max_iters: usize,
    /// Stop when `‖∇f‖_∞ ≤ grad_tol`.
    pub grad_tol: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub restarts: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self { max_iters: 500, grad_tol: 1e-6, wolfe_c1: 1e-4, wolfe_c2: 0.9, restarts: 64, init_scale: 1.0, seed: 0 }
    }
}

impl BfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::arg("wolfe constants need 0 < c1 < c2 < 1"));
        }
        if self.restarts < 1 {
            return Err(Error::arg("restarts must be >= 1"));
        }
        if !(self.grad_tol >= 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::arg("grad_tol and init_scale must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub c_best: Vec<f64>,
    pub objective: f64,
    pub restart_index: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `‖∇f‖_∞` at `c_best`.
    pub grad_norm: f64,
}

/// One accepted BFGS step, for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub step: f64,
    pub f_before: f64,
    pub f_after: f64,
    pub slope_before: f64,
    pub slope_after: f64,
}

impl StepRecord {
    pub fn satisfies_strong_wolfe(&self, c1: f64, c2: f64) -> bool {
        self.f_after <= self.f_before + c1 * self.step * self.slope_before
            && self.slope_after.abs() <= c2 * self.slope_before.abs()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

fn usable(f: f64) -> bool {
    f.is_finite() && f < SENTINEL
}

struct Trial {
    step: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, O: Objective + ?Sized> {
    obj: &'a O,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
}

impl<O: Objective + ?Sized> LineSearch<'_, O> {
    const MAX_BRACKET: usize = 40;
    const MAX_ZOOM: usize = 60;

    fn eval(&self, step: f64) -> Trial {
        let pt: Vec<f64> = self.x.iter().zip(self.dir).map(|(a, d)| a + step * d).collect();
        let (f, g) = self.obj.value_grad(&pt);
        let slope = g.iter().zip(self.dir).map(|(a, b)| a * b).sum();
        Trial { step, f, g, slope }
    }

    fn armijo(&self, t: &Trial) -> bool {
        usable(t.f) && t.f <= self.f0 + self.c1 * t.step * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.c2 * self.slope0
    }

    /// Nocedal & Wright style bracketing phase followed by `zoom`.
    fn run(&self, initial: f64) -> Option<Trial> {
        let mut prev = Trial { step: 0.0, f: self.f0, g: Vec::new(), slope: self.slope0 };
        let mut step = initial;
        for i in 0..Self::MAX_BRACKET {
            let t = self.eval(step);
            if !self.armijo(&t) || (i > 0 && t.f >= prev.f) {
                return self.zoom(prev, t);
            }
            if self.curvature(&t) {
                return Some(t);
            }
            if t.slope >= 0.0 {
                return self.zoom(t, prev);
            }
            step *= 2.0;
            prev = t;
        }
        None
    }

    fn zoom(&self, mut lo: Trial, mut hi: Trial) -> Option<Trial> {
        for _ in 0..Self::MAX_ZOOM {
            let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
            let width = b - a;
            if width <= 1e-16 * b.max(1e-300) {
                break;
            }
            let cubic = if usable(hi.f) { cubic_min(&lo, &hi) } else { None };
            let step = match cubic {
                Some(s) if s >= a + 0.1 * width && s <= b - 0.1 * width => s,
                _ => 0.5 * (lo.step + hi.step),
            };
            let t = self.eval(step);
            if !self.armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Some(t);
                }
                if t.slope * (hi.step - lo.step) >= 0.0 {
                    hi = std::mem::replace(&mut lo, t);
                } else {
                    lo = t;
                }
            }
        }
        // Interval collapsed: settle for sufficient decrease if we have it.
        (lo.step > 0.0 && self.armijo(&lo) && lo.f < self.f0).then_some(lo)
    }
}

/// Minimiser of the cubic through two trials with slopes.
fn cubic_min(p: &Trial, q: &Trial) -> Option<f64> {
    let d1 = p.slope + q.slope - 3.0 * (p.f - q.f) / (p.step - q.step);
    let disc = d1 * d1 - p.slope * q.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (q.step - p.step).signum() * disc.sqrt();
    let denom = q.slope - p.slope + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let s = q.step - (q.step - p.step) * (q.slope + d2 - d1) / denom;
    s.is_finite().then_some(s)
}

/// BFGS on the full dense inverse-Hessian approximation.
pub fn bfgs_minimize<O: Objective + ?Sized>(obj: &O, x0: &[f64], config: &BfgsConfig) -> Result<OptimizationResult> {
    bfgs_minimize_traced(obj, x0, config, |_| {})
}

/// [`bfgs_minimize`] reporting every accepted step to `on_step`.
pub fn bfgs_minimize_traced<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    config: &BfgsConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<OptimizationResult> {
    config.validate()?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.value_grad(&x);
    if !f.is_finite() {
        return Err(Error::arg("objective is not finite at the starting point"));
    }
    if g.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: g.len() });
    }

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut h_is_identity = true;
    let mut scaled = false;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iters {
        if inf_norm(&g) <= config.grad_tol {
            converged = true;
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&h * &gv);
        if dir.dot(&gv) >= 0.0 {
            h.fill_with_identity();
            h_is_identity = true;
            dir = -gv.clone();
        }
        let dir_vec: Vec<f64> = dir.iter().copied().collect();
        let initial = if h_is_identity { (1.0 / dir.norm()).min(1.0) } else { 1.0 };
        let search = LineSearch {
            obj,
            x: &x,
            dir: &dir_vec,
            f0: f,
            slope0: dir.dot(&gv),
            c1: config.wolfe_c1,
            c2: config.wolfe_c2,
        };
        let Some(trial) = search.run(initial) else {
            if h_is_identity {
                break;
            }
            h.fill_with_identity();
            h_is_identity = true;
            scaled = false;
            continue;
        };

        on_step(&StepRecord {
            step: trial.step,
            f_before: f,
            f_after: trial.f,
            slope_before: search.slope0,
            slope_after: trial.slope,
        });

        let s = &dir * trial.step;
        let yv = DVector::from_column_slice(&trial.g) - &gv;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() && sy > 0.0 {
            if !scaled {
                h *= sy / yv.dot(&yv);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded.
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_is_identity = false;
        }

        for (xi, si) in x.iter_mut().zip(s.iter()) {
            *xi += si;
        }
        f = trial.f;
        g = trial.g;
        iterations += 1;
    }
    if !converged && inf_norm(&g) <= config.grad_tol {
        converged = true;
    }

    Ok(OptimizationResult {
        grad_norm: inf_norm(&g),
        converged: converged && usable(f),
        c_best: x,
        objective: f,
        restart_index: 0,
        iterations,
    })
}

/// Starting point of restart `k`: `init_scale · N(0, I)` from stream `seed ⊕ k`.
pub fn initial_point(dim: usize, config: &BfgsConfig, restart: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ restart as u64);
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.init_scale * z
        })
        .collect()
}

/// Runs every restart and returns them in restart order.
pub fn multistart_all<O: Objective + ?Sized>(obj: &O, dim: usize, config: &BfgsConfig) -> Result<Vec<Result<OptimizationResult>>> {
    config.validate()?;
    Ok((0..config.restarts)
        .into_par_iter()
        .map(|k| {
            let x0 = initial_point(dim, config, k);
            bfgs_minimize(obj, &x0, config).map(|mut r| {
                r.restart_index = k;
                r
            })
        })
        .collect())
}

/// Best of `config.restarts` seeded BFGS runs; ties go to the lowest restart index.
pub fn multistart<O: Objective + ?Sized>(obj: &O, dim: usize, config: &BfgsConfig) -> Result<OptimizationResult> {
    let runs = multistart_all(obj, dim, config)?;
    let mut best: Option<OptimizationResult> = None;
    for r in runs.into_iter().flatten() {
        if !usable(r.objective) {
            continue;
        }
        if best.as_ref().map_or(true, |b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::Optimization(format!("none of {} restarts reached a finite objective", config.restarts)))
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::arg("finite-difference step must be positive"));
    }
    let mut pt = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        pt[i] = x[i] + h;
        let fp = f(&pt);
        pt[i] = x[i] - h;
        let fm = f(&pt);
        pt[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Optimization(format!("non-finite objective while differencing component {i}")));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_component: usize,
    pub passed: bool,
}

/// Below this magnitude components are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

/// Compares `g(x)` with central differences of `f`.
pub fn grad_check(
    f: impl Fn(&[f64]) -> f64,
    g: impl Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    h: f64,
    rel_tol: f64,
) -> Result<GradCheckReport> {
    let fd = finite_diff_grad(f, x, h)?;
    let analytic = g(x);
    if analytic.len() != fd.len() {
        return Err(Error::DimensionMismatch { expected: fd.len(), got: analytic.len() });
    }
    let mut worst = (0.0f64, 0usize);
    for (i, (a, d)) in analytic.iter().zip(&fd).enumerate() {
        let err = if d.abs() < GRAD_CHECK_FLOOR { (a - d).abs() } else { (a - d).abs() / d.abs() };
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport { max_rel_err: worst.0, worst_component: worst.1, passed: worst.0 <= rel_tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere() -> FnObjective<impl Fn(&[f64]) -> f64 + Sync, impl Fn(&[f64]) -> Vec<f64> + Sync> {
        FnObjective::new(|x: &[f64]| x.iter().map(|v| v * v).sum(), |x: &[f64]| x.iter().map(|v| 2.0 * v).collect())
    }

    fn rosenbrock() -> FnObjective<impl Fn(&[f64]) -> f64 + Sync, impl Fn(&[f64]) -> Vec<f64> + Sync> {
        FnObjective::new(
            |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            |x: &[f64]| {
                vec![
                    -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                    200.0 * (x[1] - x[0] * x[0]),
                ]
            },
        )
    }

    #[test]
    fn quadratic_converges_quickly() {
        let r = bfgs_minimize(&sphere(), &[3.0, 4.0], &BfgsConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.objective <= 1e-10);
        assert!(r.iterations <= 5, "{} iterations", r.iterations);
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let cfg = BfgsConfig { grad_tol: 1e-9, ..Default::default() };
        let r = bfgs_minimize(&rosenbrock(), &[-1.2, 1.0], &cfg).unwrap();
        assert!(r.iterations <= 200, "{} iterations", r.iterations);
        assert!((r.c_best[0] - 1.0).abs() <= 1e-6 && (r.c_best[1] - 1.0).abs() <= 1e-6, "{:?}", r.c_best);
    }

    #[test]
    fn already_optimal_start_is_untouched() {
        let r = bfgs_minimize(&sphere(), &[0.0, 0.0, 0.0], &BfgsConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
        assert_eq!(r.c_best, vec![0.0; 3]);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let obj = FnObjective::new(|_: &[f64]| f64::NAN, |x: &[f64]| vec![0.0; x.len()]);
        assert!(matches!(bfgs_minimize(&obj, &[1.0], &BfgsConfig::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn accepted_steps_descend_and_satisfy_wolfe() {
        let cfg = BfgsConfig::default();
        let mut steps = Vec::new();
        bfgs_minimize_traced(&rosenbrock(), &[-1.2, 1.0], &cfg, |s| steps.push(*s)).unwrap();
        assert!(!steps.is_empty());
        for s in &steps {
            assert!(s.f_after < s.f_before + 1e-14);
            assert!(s.satisfies_strong_wolfe(cfg.wolfe_c1, cfg.wolfe_c2), "{s:?}");
        }
    }

    #[test]
    fn sentinel_region_is_avoided() {
        // Defined only for x > -1; the step from 3 along -∇ overshoots into the hole.
        let obj = FnObjective::new(
            |x: &[f64]| if x[0] <= -1.0 { SENTINEL } else { (x[0] - 0.5).powi(2) },
            |x: &[f64]| if x[0] <= -1.0 { vec![0.0] } else { vec![2.0 * (x[0] - 0.5)] },
        );
        let r = bfgs_minimize(&obj, &[30.0], &BfgsConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.c_best[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn multistart_on_convex_problem_agrees() {
        let cfg = BfgsConfig { restarts: 8, seed: 4, ..Default::default() };
        let runs = multistart_all(&sphere(), 4, &cfg).unwrap();
        let values: Vec<f64> = runs.into_iter().map(|r| r.unwrap().objective).collect();
        for v in &values {
            assert!((v - values[0]).abs() <= 1e-8);
        }
    }

    #[test]
    fn multistart_finds_double_well_minimum() {
        let obj = FnObjective::new(|x: &[f64]| (x[0] * x[0] - 1.0).powi(2), |x: &[f64]| vec![4.0 * x[0] * (x[0] * x[0] - 1.0)]);
        let cfg = BfgsConfig { restarts: 64, seed: 17, ..Default::default() };
        let r = multistart(&obj, 1, &cfg).unwrap();
        assert!(r.objective < 1e-12);
        assert!((r.c_best[0].abs() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_restart_matches_plain_bfgs() {
        let cfg = BfgsConfig { restarts: 1, seed: 99, ..Default::default() };
        let m = multistart(&rosenbrock(), 2, &cfg).unwrap();
        let x0 = initial_point(2, &cfg, 0);
        let b = bfgs_minimize(&rosenbrock(), &x0, &cfg).unwrap();
        assert_eq!(m, b);
    }

    #[test]
    fn multistart_is_deterministic_and_dominant() {
        let obj = FnObjective::new(
            |x: &[f64]| (3.0 * x[0]).sin() + 0.1 * x[0] * x[0] + (x[1] - 0.3).powi(2),
            |x: &[f64]| vec![3.0 * (3.0 * x[0]).cos() + 0.2 * x[0], 2.0 * (x[1] - 0.3)],
        );
        let cfg = BfgsConfig { restarts: 16, seed: 5, init_scale: 3.0, ..Default::default() };
        let a = multistart(&obj, 2, &cfg).unwrap();
        let b = multistart(&obj, 2, &cfg).unwrap();
        assert_eq!(a, b);
        for r in multistart_all(&obj, 2, &cfg).unwrap() {
            assert!(a.objective <= r.unwrap().objective);
        }
    }

    #[test]
    fn multistart_reports_total_failure() {
        let obj = FnObjective::new(|_: &[f64]| SENTINEL, |x: &[f64]| vec![0.0; x.len()]);
        let cfg = BfgsConfig { restarts: 3, ..Default::default() };
        assert!(matches!(multistart(&obj, 2, &cfg), Err(Error::Optimization(_))));
    }

    #[test]
    fn finite_difference_examples() {
        let a = [1.5, -2.0, 0.25];
        let g = finite_diff_grad(|x| x.iter().zip(&a).map(|(u, v)| u * v).sum(), &[0.3, 0.7, -1.1], 1e-6).unwrap();
        for (gi, ai) in g.iter().zip(&a) {
            assert!((gi - ai).abs() < 1e-9);
        }
        let g = finite_diff_grad(|x| x[0] * x[0], &[1.0], 1e-6).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9);
        assert!(finite_diff_grad(|_| f64::INFINITY, &[1.0], 1e-6).is_err());
        assert!(finite_diff_grad(|x| x[0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn grad_check_reports() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let good = grad_check(f, |x| vec![2.0 * x[0], 3.0], &[1.0, 2.0], 1e-6, 1e-6).unwrap();
        assert!(good.passed);
        let bad = grad_check(f, |x| vec![2.0 * x[0], 3.5], &[1.0, 2.0], 1e-6, 1e-6).unwrap();
        assert!(!bad.passed);
        assert_eq!(bad.worst_component, 1);
    }
}
