//! Test functions, sampling, evaluation grids, cross-validation and the
//! single- versus two-layer comparisons.

mod compare;
mod cv;
mod demo;

pub use compare::{inner_transform_dump, run_comparison, Comparison, ComparisonReport};
pub use cv::{cross_validate, fold_partition, CvCell, CvMetric, CvOutcome, CvPlan, TwoLayerSpec};
pub use demo::{run_demo, DemoFigure, DemoOutput, DemoScale};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::single_layer::SingleLayerModel;

/// A function on the plane that data is sampled from and errors are measured against.
pub trait Target: Sync {
    fn value(&self, p: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestFunction {
    /// `1 / (0.1 + |x − y|)`, a kink along the diagonal.
    H1,
    /// Indicator of `x·y > 3/20`.
    H2,
}

impl TestFunction {
    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::H1 => "h1",
            TestFunction::H2 => "h2",
        }
    }

    pub fn eval(&self, p: &[f64]) -> Result<f64> {
        if p.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: p.len() });
        }
        Ok(self.value(p))
    }
}

impl Target for TestFunction {
    fn value(&self, p: &[f64]) -> f64 {
        let (x, y) = (p[0], p[1]);
        match self {
            TestFunction::H1 => 1.0 / (0.1 + (x - y).abs()),
            TestFunction::H2 => {
                if x * y > 3.0 / 20.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h1" => Ok(TestFunction::H1),
            "h2" => Ok(TestFunction::H2),
            _ => Err(Error::Config(format!("unknown test function '{s}'"))),
        }
    }
}

impl Target for SingleLayerModel {
    fn value(&self, p: &[f64]) -> f64 {
        self.predict(p).expect("target evaluated in its own dimension")
    }
}

/// Uniform samples on an axis-aligned box with additive Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingPlan {
    pub n_samples: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self { n_samples: 100, lower: [-1.0; 2], upper: [1.0; 2], noise_sigma: 0.01, seed: 0 }
    }
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::arg("need at least one sample"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg("noise_sigma must be >= 0"));
        }
        if (0..2).any(|i| !(self.lower[i] < self.upper[i])) {
            return Err(Error::arg("box needs lower < upper in every coordinate"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if xs.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: xs.len(), got: y.len() });
        }
        if let Some(first) = xs.first() {
            if xs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::arg("all points need the same dimension"));
            }
        }
        Ok(Self { xs, y })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { xs: idx.iter().map(|&i| self.xs[i].clone()).collect(), y: idx.iter().map(|&i| self.y[i]).collect() }
    }
}

/// `y_i = h(x_i) + ε_i` at uniform random `x_i`; draws `x₁, x₂, ε` per sample.
pub fn sample_dataset(target: &dyn Target, plan: &SamplingPlan) -> Result<Dataset> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let u0 = Uniform::new_inclusive(plan.lower[0], plan.upper[0]);
    let u1 = Uniform::new_inclusive(plan.lower[1], plan.upper[1]);
    let noise = Normal::new(0.0, plan.noise_sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut xs = Vec::with_capacity(plan.n_samples);
    let mut y = Vec::with_capacity(plan.n_samples);
    for _ in 0..plan.n_samples {
        let p = vec![u0.sample(&mut rng), u1.sample(&mut rng)];
        let eps = noise.sample(&mut rng);
        y.push(target.value(&p) + eps);
        xs.push(p);
    }
    Dataset::new(xs, y)
}

/// Uniform tensor grid over a box, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalGrid {
    pub meshwidth: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { meshwidth: 1.0 / 50.0, lower: [-1.0; 2], upper: [1.0; 2] }
    }
}

impl EvalGrid {
    fn axis(&self, i: usize) -> Result<Vec<f64>> {
        let span = self.upper[i] - self.lower[i];
        if !(self.meshwidth > 0.0) || !(span > 0.0) {
            return Err(Error::arg("grid needs a positive meshwidth and a non-empty box"));
        }
        let steps = (span / self.meshwidth).round() as usize;
        if steps == 0 {
            return Err(Error::arg("meshwidth exceeds the box"));
        }
        Ok((0..=steps)
            .map(|k| if k == steps { self.upper[i] } else { self.lower[i] + span * k as f64 / steps as f64 })
            .collect())
    }

    /// Points in row-major order: `t₂` is the slow index, `t₁` the fast one.
    pub fn points(&self) -> Result<Vec<[f64; 2]>> {
        let a = self.axis(0)?;
        let b = self.axis(1)?;
        Ok(b.iter().flat_map(|&t2| a.iter().map(move |&t1| [t1, t2])).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub max: f64,
    /// Share of grid points whose error exceeds `0.1·‖h‖_∞`.
    pub frac_above_10pct: f64,
    /// `max |h|` over the grid.
    pub target_sup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorGrid {
    /// `(t₁, t₂, |pred − h|)` in grid order.
    pub rows: Vec<[f64; 3]>,
    pub stats: ErrorStats,
}

impl ErrorGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t1,t2,abs_error\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r[0], r[1], r[2]));
        }
        out
    }
}

/// `|pred(t) − h(t)|` at every grid point, with summary statistics.
pub fn pointwise_error_grid(
    predictor: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    target: &dyn Target,
    grid: &EvalGrid,
) -> Result<ErrorGrid> {
    let pts = grid.points()?;
    let rows: Vec<[f64; 4]> = pts
        .par_iter()
        .map(|t| {
            let h = target.value(t);
            Ok([t[0], t[1], (predictor(t)? - h).abs(), h.abs()])
        })
        .collect::<Result<_>>()?;
    let sup = rows.iter().fold(0.0f64, |m, r| m.max(r[3]));
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut above = 0usize;
    for r in &rows {
        sum += r[2];
        max = max.max(r[2]);
        if r[2] > 0.1 * sup {
            above += 1;
        }
    }
    let n = rows.len() as f64;
    Ok(ErrorGrid {
        rows: rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect(),
        stats: ErrorStats { mean: sum / n, max, frac_above_10pct: above as f64 / n, target_sup: sup },
    })
}

/// Named random streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedStream {
    Sampling,
    Init,
    Folds,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seed_stream(master: u64, stream: SeedStream) -> u64 {
    let tag = match stream {
        SeedStream::Sampling => 0x5341_4d50,
        SeedStream::Init => 0x494e_4954,
        SeedStream::Folds => 0x464f_4c44,
    };
    splitmix64(master ^ splitmix64(tag))
}
