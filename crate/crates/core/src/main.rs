use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deepkern::config::RunConfig;
use deepkern::deep_model::{fit_two_layer, Mode, TwoLayerModel};
use deepkern::experiments::{
    cross_validate, inner_transform_dump, pointwise_error_grid, run_demo, DemoFigure, DemoScale, EvalGrid, TestFunction,
};
use deepkern::io::{read_dataset_file, read_points_file, table_csv};
use deepkern::optimize::{grad_check, initial_point};
use deepkern::{Error, Result};

#[derive(Parser)]
#[command(name = "deepkern", version, about = "Two-layer kernel interpolation and regression")]
struct Cli {
    /// Worker threads; DEEPKERN_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a two-layer model to a dataset (header x1..xd,y).
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where to write the model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a fitted model at points (header x1..xd).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate λ and μ over the configured grids.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the analytic objective gradient with finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Number of random coefficient vectors.
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Pointwise absolute error of a model against a test function on a grid.
    ErrorGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        function: TestFunction,
        #[arg(long, default_value_t = 1.0 / 50.0)]
        meshwidth: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Values of the learned inner map on a grid.
    InnerMap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1.0 / 50.0)]
        meshwidth: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce one of the reference experiments.
    Demo {
        #[arg(long)]
        figure: DemoFigure,
        #[arg(long, default_value = "desk")]
        scale: DemoScale,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the report and CSV files; the report also goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_model(path: &Path) -> Result<TwoLayerModel> {
    TwoLayerModel::from_text(&std::fs::read_to_string(path)?)
}

fn fit(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    let data = read_dataset_file(data)?;
    let spec = cfg.spec(data.dim())?;
    let mode = match cfg.fixed_mode()? {
        Some(m) => m,
        None => {
            let cv = cross_validate(&data, &spec, &cfg.cv_plan()?)?;
            Mode::Regression { lambda: cv.best_lambda, mu: cv.best_mu }
        }
    };
    let (model, opt) = fit_two_layer(&spec.problem(&data)?, mode, &spec.opt)?;
    std::fs::write(out, model.to_text())?;
    println!("lambda={}", model.lambda());
    println!("mu={}", model.mu());
    println!("objective={}", opt.objective);
    println!("restart_index={}", opt.restart_index);
    println!("iterations={}", opt.iterations);
    println!("converged={}", opt.converged);
    println!("grad_norm={}", opt.grad_norm);
    Ok(())
}

fn predict(model: &Path, points: &Path, out: Option<&Path>) -> Result<()> {
    let model = read_model(model)?;
    let (dim, pts) = read_points_file(points)?;
    let expected = model.xs().first().map_or(0, Vec::len);
    if dim != expected {
        return Err(Error::DimensionMismatch { expected, got: dim });
    }
    let header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).chain(["prediction".to_string()]).collect();
    let rows = pts
        .into_iter()
        .map(|mut p| {
            let v = model.predict(&p)?;
            p.push(v);
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&table_csv(&header, &rows), out)
}

fn cv(config: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    let data = read_dataset_file(data)?;
    let plan = cfg.cv_plan()?;
    let outcome = cross_validate(&data, &cfg.spec(data.dim())?, &plan)?;
    let header: Vec<String> =
        ["lambda", "mu", "mean"].iter().map(|s| s.to_string()).chain((1..=plan.folds).map(|k| format!("fold{k}"))).collect();
    let rows: Vec<Vec<f64>> = outcome
        .cells
        .iter()
        .map(|c| [c.lambda, c.mu, c.mean].into_iter().chain(c.fold_scores.iter().copied()).collect())
        .collect();
    emit(&table_csv(&header, &rows), out)?;
    eprintln!("best lambda={} mu={}", outcome.best_lambda, outcome.best_mu);
    Ok(())
}

fn gradcheck(config: &Path, data: &Path, instances: usize, step: f64, tol: f64) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    let data = read_dataset_file(data)?;
    let spec = cfg.spec(data.dim())?;
    let problem = spec.problem(&data)?;
    let mode = cfg.fixed_mode()?.unwrap_or(Mode::Regression { lambda: 0.1, mu: 0.01 });
    let mut worst = 0.0f64;
    for k in 0..instances {
        let c = initial_point(problem.n_params(), &spec.opt, k);
        let report = grad_check(
            |x| problem.evaluate(x, mode, false).map_or(f64::NAN, |e| e.value),
            |x| problem.evaluate(x, mode, true).map_or_else(|_| vec![f64::NAN; x.len()], |e| e.grad),
            &c,
            step,
            tol,
        )?;
        println!("instance={k} max_rel_err={} worst_component={} passed={}", report.max_rel_err, report.worst_component, report.passed);
        worst = worst.max(report.max_rel_err);
    }
    if worst > tol {
        return Err(Error::Optimization(format!("gradient check failed: max relative error {worst} > {tol}")));
    }
    Ok(())
}

fn error_grid(model: &Path, function: TestFunction, meshwidth: f64, out: Option<&Path>) -> Result<()> {
    let model = read_model(model)?;
    let grid = EvalGrid { meshwidth, ..Default::default() };
    let g = pointwise_error_grid(&|t| model.predict(t), &function, &grid)?;
    emit(&g.to_csv(), out)?;
    eprintln!("mean_error={} max_error={} frac_above_10pct={}", g.stats.mean, g.stats.max, g.stats.frac_above_10pct);
    Ok(())
}

fn inner_map(model: &Path, meshwidth: f64, out: Option<&Path>) -> Result<()> {
    let model = read_model(model)?;
    let grid = EvalGrid { meshwidth, ..Default::default() };
    let header: Vec<String> =
        ["t1", "t2"].iter().map(|s| s.to_string()).chain((1..=model.inner().output_dim()).map(|l| format!("g{l}"))).collect();
    emit(&table_csv(&header, &inner_transform_dump(&model, &grid)?), out)
}

fn demo(figure: DemoFigure, scale: DemoScale, seed: u64, out: Option<&Path>) -> Result<()> {
    let output = run_demo(figure, scale, seed)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), &output.report)?;
        for (name, body) in &output.files {
            std::fs::write(dir.join(name), body)?;
        }
    }
    print!("{}", output.report);
    Ok(())
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match std::env::var("DEEPKERN_THREADS") {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| Error::Config(format!("DEEPKERN_THREADS='{v}' is not a count")))?),
        Err(_) => flag,
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Fit { config, data, out } => fit(&config, &data, &out),
        Command::Predict { model, points, out } => predict(&model, &points, out.as_deref()),
        Command::Cv { config, data, out } => cv(&config, &data, out.as_deref()),
        Command::Gradcheck { config, data, instances, step, tol } => gradcheck(&config, &data, instances, step, tol),
        Command::ErrorGrid { model, function, meshwidth, out } => error_grid(&model, function, meshwidth, out.as_deref()),
        Command::InnerMap { model, meshwidth, out } => inner_map(&model, meshwidth, out.as_deref()),
        Command::Demo { figure, scale, seed, out } => demo(figure, scale, seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
