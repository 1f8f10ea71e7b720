use super::compare::{inner_transform_dump, run_comparison, Comparison};
use super::cv::{CvPlan, TwoLayerSpec};
use super::{seed_stream, EvalGrid, SamplingPlan, SeedStream, TestFunction};
use crate::error::{Error, Result};
use crate::kernels::{MatrixKernelSpec, ScalarKernelSpec};
use crate::optimize::BfgsConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoFigure {
    IntH1,
    IntH2,
    RegH1,
    RegH2,
    LinoutH1,
    LinoutH2,
}

impl DemoFigure {
    pub fn name(&self) -> &'static str {
        match self {
            DemoFigure::IntH1 => "int-h1",
            DemoFigure::IntH2 => "int-h2",
            DemoFigure::RegH1 => "reg-h1",
            DemoFigure::RegH2 => "reg-h2",
            DemoFigure::LinoutH1 => "linout-h1",
            DemoFigure::LinoutH2 => "linout-h2",
        }
    }

    pub fn test_function(&self) -> TestFunction {
        match self {
            DemoFigure::IntH1 | DemoFigure::RegH1 | DemoFigure::LinoutH1 => TestFunction::H1,
            _ => TestFunction::H2,
        }
    }
}

impl std::str::FromStr for DemoFigure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "int-h1" => DemoFigure::IntH1,
            "int-h2" => DemoFigure::IntH2,
            "reg-h1" => DemoFigure::RegH1,
            "reg-h2" => DemoFigure::RegH2,
            "linout-h1" => DemoFigure::LinoutH1,
            "linout-h2" => DemoFigure::LinoutH2,
            _ => return Err(Error::Config(format!("unknown figure '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemoScale {
    /// 100 samples, 64 restarts.
    Paper,
    /// 50 samples, 16 restarts, smaller cross-validation budget.
    Desk,
}

impl DemoScale {
    pub fn n_samples(&self) -> usize {
        match self {
            DemoScale::Paper => 100,
            DemoScale::Desk => 50,
        }
    }

    pub fn restarts(&self) -> usize {
        match self {
            DemoScale::Paper => 64,
            DemoScale::Desk => 16,
        }
    }

    /// Restarts per cross-validation fold fit.
    pub fn cv_restarts(&self) -> Option<usize> {
        match self {
            DemoScale::Paper => None,
            DemoScale::Desk => Some(DESK_CV_RESTARTS),
        }
    }
}

/// Restarts per fold fit during cross-validation at desk scale.
pub const DESK_CV_RESTARTS: usize = 2;

impl std::str::FromStr for DemoScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(DemoScale::Paper),
            "desk" => Ok(DemoScale::Desk),
            _ => Err(Error::Config(format!("unknown scale '{s}'"))),
        }
    }
}

/// Report text plus named CSV files.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoOutput {
    pub report: String,
    pub files: Vec<(String, String)>,
}

fn poly_inner(p: u32) -> Result<MatrixKernelSpec> {
    MatrixKernelSpec::diag_scaled(ScalarKernelSpec::poly(p, 2)?, vec![1.0, 1.0])
}

fn mixture_inner() -> Result<MatrixKernelSpec> {
    MatrixKernelSpec::diag_mixture(vec![
        ScalarKernelSpec::gauss(0.1, 2)?,
        ScalarKernelSpec::gauss(1.0, 2)?,
        ScalarKernelSpec::gauss(10.0, 2)?,
        ScalarKernelSpec::poly(1, 2)?,
        ScalarKernelSpec::poly(2, 2)?,
    ])
}

/// The arms of a figure: `(name, inner, outer, regression, cv grid)`.
fn arms(figure: DemoFigure) -> Result<Vec<(&'static str, MatrixKernelSpec, ScalarKernelSpec, bool, Vec<f64>)>> {
    use DemoFigure::*;
    Ok(match figure {
        IntH1 | IntH2 => {
            let outer = ScalarKernelSpec::tensor_matern(1, 2)?;
            vec![("p1", poly_inner(1)?, outer, false, vec![]), ("p2", poly_inner(2)?, outer, false, vec![])]
        }
        RegH1 | RegH2 => {
            let outer = ScalarKernelSpec::gauss(0.1, 2)?;
            let grid = CvPlan::binary_grid();
            vec![("p1", poly_inner(1)?, outer, true, grid.clone()), ("p2", poly_inner(2)?, outer, true, grid)]
        }
        LinoutH1 | LinoutH2 => {
            let grid = CvPlan::decimal_grid();
            vec![
                ("setting1", mixture_inner()?, ScalarKernelSpec::poly(1, 5)?, true, grid.clone()),
                ("setting2", mixture_inner()?, ScalarKernelSpec::tensor_matern(1, 5)?, true, grid),
            ]
        }
    })
}

/// The comparison behind one arm of `figure`.
pub(crate) fn arm_comparison(
    inner: MatrixKernelSpec,
    outer: ScalarKernelSpec,
    regression: bool,
    grid: Vec<f64>,
    scale: DemoScale,
    seed: u64,
) -> Comparison {
    let opt = BfgsConfig { restarts: scale.restarts(), seed: seed_stream(seed, SeedStream::Init), ..Default::default() };
    let cv = if regression {
        CvPlan {
            lambda_grid: grid.clone(),
            mu_grid: grid,
            seed: seed_stream(seed, SeedStream::Folds),
            restarts: scale.cv_restarts(),
            ..Default::default()
        }
    } else {
        CvPlan { seed: seed_stream(seed, SeedStream::Folds), ..Default::default() }
    };
    Comparison {
        spec: TwoLayerSpec { inner, outer, gamma: 0.0, opt },
        plan: SamplingPlan { n_samples: scale.n_samples(), seed: seed_stream(seed, SeedStream::Sampling), ..Default::default() },
        cv,
        regression,
        grid: EvalGrid::default(),
    }
}

/// Runs one reference experiment at the given scale.
pub fn run_demo(figure: DemoFigure, scale: DemoScale, seed: u64) -> Result<DemoOutput> {
    let tf = figure.test_function();
    let mut report = format!(
        "figure={}\nscale={}\nseed={seed}\n",
        figure.name(),
        match scale {
            DemoScale::Paper => "paper",
            DemoScale::Desk => "desk",
        }
    );
    let mut files = Vec::new();
    for (name, inner, outer, regression, grid) in arms(figure)? {
        let cmp = arm_comparison(inner, outer, regression, grid, scale, seed);
        let r = run_comparison(&tf, &cmp)?;
        report.push_str(&r.summary(name));
        files.push((format!("{name}-two-layer-error.csv"), r.two_layer.to_csv()));
        files.push((format!("{name}-single-layer-error.csv"), r.single_layer.to_csv()));

        let d = r.model.inner().output_dim();
        let mut csv = String::from("t1,t2");
        for l in 1..=d {
            csv.push_str(&format!(",g{l}"));
        }
        csv.push('\n');
        for row in inner_transform_dump(&r.model, &cmp.grid)? {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        files.push((format!("{name}-inner-map.csv"), csv));
        files.push((format!("{name}-model.txt"), r.model.to_text()));
    }
    Ok(DemoOutput { report, files })
}
