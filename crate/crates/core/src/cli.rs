//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for unreadable or malformed input, 2 when a
//! fit fails numerically, 3 for bad flags.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::additive::{fit_additive, AdditiveFitJson, AdditiveOptions, AdditiveSpec, Tuning};
use crate::basis::{self, design_matrix, min_initial_knots, place_knots, BasisSpec};
use crate::error::Error;
use crate::penalty::{ScadParams, DEFAULT_A};
use crate::selection::{self, select_lambda, Criterion, GammaSpec, SelectionOptions};
use crate::simulate::{run_study, DesignKind, ExampleSpec, KnotRule, NoiseVariance, StudyConfig};
use crate::solver::{lqa_fit, penalty_weights, FitConfig, SplineModel, SplineModelJson};

#[derive(Debug, Parser)]
#[command(name = "scad-spline", version, about = "SCAD-penalized regression splines")]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit at one fixed lambda.
    Fit(FitArgs),
    /// Choose lambda on a grid by MGCV or PREC.
    Select(SelectArgs),
    /// Evaluate a saved model at new points.
    Predict(PredictArgs),
    /// Run a replicate study on a benchmark signal.
    Simulate(SimulateArgs),
    /// Fit an additive model to `x1,...,xJ,y` data.
    AdditiveFit(AdditiveArgs),
}

#[derive(Debug, Args)]
struct BasisArgs {
    /// Spline order (3 is quadratic).
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Number of initial knots, or `auto`.
    #[arg(long, default_value = "auto")]
    knots: KnotCount,
    /// Run probability of the automatic knot count.
    #[arg(long, default_value_t = basis::DEFAULT_ALPHA)]
    alpha: f64,
    /// Span divisor of the automatic knot count.
    #[arg(long, default_value_t = basis::DEFAULT_SPAN_DIVISOR)]
    divisor: f64,
    /// SCAD shape parameter.
    #[arg(long, default_value_t = DEFAULT_A)]
    a: f64,
    #[arg(long, default_value_t = FitConfig::default().max_iterations)]
    max_iterations: usize,
}

#[derive(Debug, Clone, Copy)]
enum KnotCount {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for KnotCount {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        s.parse()
            .map(Self::Fixed)
            .map_err(|_| format!("expected a knot count or `auto`, got '{s}'"))
    }
}

impl BasisArgs {
    fn knot_count(&self, n: usize) -> Result<usize, Error> {
        match self.knots {
            KnotCount::Auto => min_initial_knots(n, self.alpha, self.divisor),
            KnotCount::Fixed(k) => Ok(k),
        }
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iterations: self.max_iterations,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct CriterionArgs {
    #[arg(long, value_enum, default_value_t = CriterionArg::Mgcv)]
    criterion: CriterionArg,
    /// Inflation factor: a number >= 1 or one of ln(n)/2, ln(n), ln(k)/2, ln(k).
    #[arg(long, default_value = "2.5")]
    gamma: String,
    /// Number of positive grid values.
    #[arg(long, default_value_t = selection::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// Smallest positive grid value; requires --lambda-max.
    #[arg(long, requires = "lambda_max")]
    lambda_min: Option<f64>,
    /// Largest grid value; requires --lambda-min.
    #[arg(long, requires = "lambda_min")]
    lambda_max: Option<f64>,
    /// Error variance for PREC (estimated when absent).
    #[arg(long)]
    sigma2: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    Mgcv,
    Prec,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Mgcv => Criterion::Mgcv,
            CriterionArg::Prec => Criterion::Prec,
        }
    }
}

impl CriterionArgs {
    fn gamma(&self) -> Result<GammaSpec, CliError> {
        self.gamma.parse().map_err(CliError::usage)
    }

    fn options(&self, config: FitConfig) -> Result<SelectionOptions, CliError> {
        Ok(SelectionOptions {
            criterion: self.criterion.into(),
            gamma: self.gamma()?,
            sigma2: self.sigma2,
            config,
            parallel: false,
        })
    }

    fn grid(&self, design: &basis::DesignMatrix, y: &[f64], weights: &[f64]) -> Result<Vec<f64>, CliError> {
        match (self.lambda_min, self.lambda_max) {
            (Some(lo), Some(hi)) => {
                if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(CliError::usage("need 0 < --lambda-min <= --lambda-max"));
                }
                let mut grid = selection::log_grid(hi, self.grid_size, lo / hi);
                grid.dedup();
                Ok(grid)
            }
            _ => Ok(selection::lambda_grid(design, y, weights, self.grid_size)?),
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with header `x,y`.
    #[arg(long)]
    input: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    output: PathBuf,
    /// Fitted curve CSV (`x,f_hat`) to write.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    basis: BasisArgs,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// CSV with header `x,y`.
    #[arg(long)]
    input: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    output: PathBuf,
    /// Fitted curve CSV (`x,f_hat`) to write.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Selection path JSON to write.
    #[arg(long)]
    path: Option<PathBuf>,
    #[command(flatten)]
    basis: BasisArgs,
    #[command(flatten)]
    selection: CriterionArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model JSON written by fit, select or additive-fit.
    #[arg(long)]
    model: PathBuf,
    /// CSV of evaluation points (`x`, or `x1,...,xJ` for additive models).
    #[arg(long)]
    points: PathBuf,
    /// Curve CSV to write.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Benchmark signal, 1 to 4.
    #[arg(long)]
    example: u8,
    #[arg(long)]
    seed: u64,
    /// Replicate count (defaults to the benchmark's own).
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Equispaced design points instead of uniform draws.
    #[arg(long)]
    equispaced: bool,
    /// PREC error variance: `estimate`, `true`, or a number.
    #[arg(long, default_value = "estimate")]
    noise: String,
    /// Directory for summary.json, replicates.csv and knots.csv.
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
    #[command(flatten)]
    basis: BasisArgs,
    #[arg(long, value_enum, default_value_t = CriterionArg::Mgcv)]
    criterion: CriterionArg,
    /// Inflation factor: a number >= 1 or one of ln(n)/2, ln(n), ln(k)/2, ln(k).
    #[arg(long, default_value = "2.5")]
    gamma: String,
    #[arg(long, default_value_t = selection::DEFAULT_GRID_SIZE)]
    grid_size: usize,
}

#[derive(Debug, Args)]
struct AdditiveArgs {
    /// CSV with header `x1,...,xJ,y`.
    #[arg(long)]
    input: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    output: PathBuf,
    /// Fitted values CSV (`x1,...,xJ,f_hat`) to write.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Fixed lambda; the grid search runs when absent.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    basis: BasisArgs,
    #[command(flatten)]
    selection: CriterionArgs,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numerical(String),
    Usage(String),
}

impl CliError {
    fn input(path: &Path, e: impl Display) -> Self {
        Self::Input(format!("{}: {e}", path.display()))
    }

    fn usage(e: impl Display) -> Self {
        Self::Usage(e.to_string())
    }

    fn code(&self) -> i32 {
        match self {
            Self::Input(_) => 1,
            Self::Numerical(_) => 2,
            Self::Usage(_) => 3,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Input(m) => write!(f, "input error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::Usage(m) => write!(f, "usage error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) => Self::Usage(e.to_string()),
            Error::Dimension(_) | Error::InvalidData(_) => Self::Input(e.to_string()),
            Error::Singular(_) | Error::Selection(_) => Self::Numerical(e.to_string()),
        }
    }
}

/// Runs the command line `args` (program name first) and returns the exit status.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("scad-spline: {e}");
            e.code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Select(a) => select(a),
        Command::Predict(a) => predict(a),
        Command::Simulate(a) => simulate(a),
        Command::AdditiveFit(a) => additive(a),
    }
}

/// Parsed numeric CSV: header names and columns.
struct Table {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::input(path, e))?;
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::input(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CliError::input(path, e))?;
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    CliError::Input(format!("{}: row {}: '{field}' is not a number", path.display(), line + 1))
                })?;
                if !v.is_finite() {
                    return Err(CliError::Input(format!("{}: row {}: non-finite value", path.display(), line + 1)));
                }
                columns[j].push(v);
            }
        }
        if columns.first().is_none_or(|c| c.is_empty()) {
            return Err(CliError::Input(format!("{}: no data rows", path.display())));
        }
        Ok(Self { names, columns })
    }

    fn column(&self, name: &str, path: &Path) -> Result<&[f64], CliError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| CliError::Input(format!("{}: missing column '{name}'", path.display())))
    }

    /// Columns `x1, x2, ...` as an `n x J` matrix.
    fn covariates(&self, path: &Path) -> Result<DMatrix<f64>, CliError> {
        let mut cols = Vec::new();
        while let Some(j) = self.names.iter().position(|n| *n == format!("x{}", cols.len() + 1)) {
            cols.push(j);
        }
        if cols.is_empty() {
            return Err(CliError::Input(format!("{}: expected columns x1,...,xJ", path.display())));
        }
        let n = self.columns[0].len();
        Ok(DMatrix::from_fn(n, cols.len(), |i, j| self.columns[cols[j]][i]))
    }
}

fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let t = Table::read(path)?;
    Ok((t.column("x", path)?.to_vec(), t.column("y", path)?.to_vec()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::input(path, e))
}

/// CSV text with a header row and every value printed as `{:.16e}`.
fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn curve_csv(x: &[f64], f: &[f64]) -> String {
    csv_text(&["x".into(), "f_hat".into()], x.iter().zip(f).map(|(a, b)| vec![*a, *b]))
}

fn univariate_basis(x: &[f64], args: &BasisArgs) -> Result<BasisSpec, CliError> {
    let k = args.knot_count(x.len())?;
    Ok(BasisSpec::new(args.order, place_knots(x, k)?)?)
}

fn save_model(model: &SplineModel, x: &[f64], output: &Path, curve: Option<&Path>) -> Result<(), CliError> {
    write_file(output, &model.to_json())?;
    if let Some(c) = curve {
        write_file(c, &curve_csv(x, &model.predict(x)?))?;
    }
    Ok(())
}

fn fit(a: FitArgs) -> Result<(), CliError> {
    let (x, y) = read_xy(&a.input)?;
    let basis = univariate_basis(&x, &a.basis)?;
    let design = design_matrix(&x, &basis);
    let weights = penalty_weights(&design)?.weights;
    let params = ScadParams::new(a.lambda, a.basis.a)?;
    let fit = lqa_fit(&design, &y, &params, &weights, &a.basis.fit_config(), None)?;
    save_model(&SplineModel { basis, fit }, &x, &a.output, a.curve.as_deref())
}

fn select(a: SelectArgs) -> Result<(), CliError> {
    let (x, y) = read_xy(&a.input)?;
    let basis = univariate_basis(&x, &a.basis)?;
    let design = design_matrix(&x, &basis);
    let weights = penalty_weights(&design)?.weights;
    let grid = a.selection.grid(&design, &y, &weights)?;
    let options = a.selection.options(a.basis.fit_config())?;
    let template = ScadParams::new(0.0, a.basis.a)?;
    let result = select_lambda(&design, &y, &weights, &template, &grid, &options)?;
    if let Some(p) = &a.path {
        let mut shown = result.clone();
        shown.best_fit.weights.clear();
        write_file(p, &serde_json::to_string_pretty(&shown).expect("selection serializes"))?;
    }
    let model = SplineModel {
        basis,
        fit: result.best_fit,
    };
    save_model(&model, &x, &a.output, a.curve.as_deref())
}

fn predict(a: PredictArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.model).map_err(|e| CliError::input(&a.model, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::input(&a.model, e))?;
    let points = Table::read(&a.points)?;
    let body = if value.get("components").is_some() {
        let model: AdditiveFitJson =
            serde_json::from_value(value).map_err(|e| CliError::input(&a.model, e))?;
        let data = points.covariates(&a.points)?;
        let f = model.predict(&data)?;
        fitted_table(&data, &f)
    } else {
        let model: SplineModelJson =
            serde_json::from_value(value).map_err(|e| CliError::input(&a.model, e))?;
        let x = points.column("x", &a.points)?;
        curve_csv(x, &model.predict(x)?)
    };
    write_file(&a.output, &body)
}

fn fitted_table(data: &DMatrix<f64>, f: &[f64]) -> String {
    let mut header: Vec<String> = (1..=data.ncols()).map(|j| format!("x{j}")).collect();
    header.push("f_hat".into());
    csv_text(
        &header,
        (0..data.nrows()).map(|i| {
            let mut row: Vec<f64> = data.row(i).iter().copied().collect();
            row.push(f[i]);
            row
        }),
    )
}

fn additive(a: AdditiveArgs) -> Result<(), CliError> {
    let table = Table::read(&a.input)?;
    let data = table.covariates(&a.input)?;
    let y = table.column("y", &a.input)?;
    let spec = match a.basis.knots {
        KnotCount::Auto => AdditiveSpec::auto(&data, a.basis.order, a.basis.alpha, a.basis.divisor)?,
        KnotCount::Fixed(k) => AdditiveSpec::with_knot_count(&data, a.basis.order, k)?,
    };
    if a.selection.lambda_min.is_some() {
        return Err(CliError::usage("additive-fit searches its own grid; use --grid-size or --lambda"));
    }
    let options = AdditiveOptions {
        a: a.basis.a,
        tuning: match a.lambda {
            Some(lambda) => Tuning::Fixed { lambda },
            None => Tuning::Grid {
                size: a.selection.grid_size,
            },
        },
        selection: a.selection.options(a.basis.fit_config())?,
    };
    let fit = fit_additive(&data, y, &spec, &options)?;
    write_file(&a.output, &fit.to_json())?;
    if let Some(c) = &a.curve {
        write_file(c, &fitted_table(&data, &fit.fitted_values()))?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let example = ExampleSpec::by_id(a.example)?;
    let replicates = a.replicates.unwrap_or(example.replicates);
    let sigma2 = match a.noise.to_ascii_lowercase().as_str() {
        "estimate" => NoiseVariance::Estimate,
        "true" => NoiseVariance::True,
        other => match other.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => NoiseVariance::Fixed(v),
            _ => return Err(CliError::usage(format!("--noise must be estimate, true or a positive number, got '{other}'"))),
        },
    };
    let config = StudyConfig {
        knots: match a.basis.knots {
            KnotCount::Auto => KnotRule::Auto {
                alpha: a.basis.alpha,
                divisor: a.basis.divisor,
            },
            KnotCount::Fixed(count) => KnotRule::Fixed { count },
        },
        order: a.basis.order,
        a: a.basis.a,
        criterion: a.criterion.into(),
        gamma: a.gamma.parse().map_err(CliError::usage)?,
        sigma2,
        design: if a.equispaced {
            DesignKind::Equispaced
        } else {
            DesignKind::Uniform
        },
        grid_size: a.grid_size,
        fit: a.basis.fit_config(),
    };
    let outcome = run_study(&example, &config, replicates, a.seed, Some(a.workers))?;
    fs::create_dir_all(&a.output_dir).map_err(|e| CliError::input(&a.output_dir, e))?;
    let summary = &outcome.summary;
    write_file(
        &a.output_dir.join("summary.json"),
        &serde_json::to_string_pretty(summary).expect("summary serializes"),
    )?;
    let mut rows = String::from("seed,mse,knots_selected,iterations\n");
    for r in &outcome.records {
        rows.push_str(&format!("{},{:.16e},{},{}\n", r.seed, r.mse, r.knots_selected, r.iterations));
    }
    write_file(&a.output_dir.join("replicates.csv"), &rows)?;
    let mut knots = String::from("knot_location,frequency\n");
    for k in &summary.knot_frequency {
        knots.push_str(&format!("{:.16e},{}\n", k.location, k.frequency));
    }
    write_file(&a.output_dir.join("knots.csv"), &knots)?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "example {}: median MSE x1000 {:.3} (IQR {:.3}) over {} replicates",
        example.id, summary.median_mse_x1000, summary.iqr_mse_x1000, summary.completed
    );
    Ok(())
}
