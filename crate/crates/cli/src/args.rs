use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plaft::data::{ColumnSelector, CsvSchema, Dataset};
use plaft::model::ModelSpec;
use plaft::solver::SolverConfig;
use plaft::splines::{DEFAULT_DEGREE, DEFAULT_KNOTS};
use plaft::tuning::{Criterion, TuningGrid};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "plaft", version, about = "Penalized partly linear AFT models with Gehan-loss estimation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Master seed for folds, splits and simulation.
    #[arg(long, global = true, default_value_t = 2024)]
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    /// Directory for every output file; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

impl GlobalArgs {
    pub fn resolved_threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit one model and write model.json, selected_features.csv and phi_curve.csv.
    Fit(FitArgs),
    /// Evaluate a tuning grid and write tuning.csv.
    Tune(TuneArgs),
    /// Score new subjects with a saved model.
    Predict(PredictArgs),
    /// c statistic of a saved model, or repeated stratified split validation.
    Evaluate(EvaluateArgs),
    /// Monte Carlo study of one simulation design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Headed CSV file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    /// 1 = event, 0 = censored.
    #[arg(long, default_value = "status")]
    pub status_col: String,
    /// Names, 1-based positions or ranges such as `age,gleason` or `3..4`.
    #[arg(long, default_value = "")]
    pub clinical_cols: String,
    /// Names, 1-based positions or ranges such as `g1..g1536`.
    #[arg(long, default_value = "")]
    pub feature_cols: String,
    /// The time column already holds log times.
    #[arg(long)]
    pub time_is_log: bool,
    /// Average rows sharing this subject id before fitting.
    #[arg(long)]
    pub id_col: Option<String>,
}

impl DataArgs {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            time_col: self.time_col.clone(),
            status_col: self.status_col.clone(),
            clinical_cols: ColumnSelector::parse(&self.clinical_cols),
            feature_cols: ColumnSelector::parse(&self.feature_cols),
            time_is_log: self.time_is_log,
            id_col: self.id_col.clone(),
        }
    }

    pub fn load(&self) -> plaft::Result<Dataset<f64>> {
        plaft::data::load_csv(&self.data, &self.schema())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Exact,
    Smoothed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionChoice {
    Cv,
    Gcv,
}

impl From<CriterionChoice> for Criterion {
    fn from(c: CriterionChoice) -> Self {
        match c {
            CriterionChoice::Cv => Criterion::Cv,
            CriterionChoice::Gcv => Criterion::Gcv,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Clinical columns entering linearly (names or 1-based positions
    /// within the clinical block); every other clinical column gets a spline.
    #[arg(long, default_value = "")]
    pub linear_clinical: String,
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    /// Knots per spline, at equally spaced percentiles.
    #[arg(long, default_value_t = DEFAULT_KNOTS)]
    pub knots: usize,
    /// Penalty on the knot coefficients.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Lasso penalty on the feature coefficients.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Apply λ to linearly modeled clinical covariates as well.
    #[arg(long)]
    pub penalize_clinical: bool,
    /// Use the raw feature scale instead of standardizing.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, value_enum, default_value_t = SolverChoice::Exact)]
    pub solver: SolverChoice,
    /// Iteration budget of the smoothed solver.
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

impl ModelArgs {
    pub fn spec(&self, ds: &Dataset<f64>) -> plaft::Result<ModelSpec<f64>> {
        let names: Vec<String> = (0..ds.q()).map(|j| ds.clinical_name(j)).collect();
        let linear = ColumnSelector::parse(&self.linear_clinical).resolve(&names)?;
        let nonlinear = (0..ds.q()).filter(|j| !linear.contains(j)).collect();
        let mut solver = match self.solver {
            SolverChoice::Exact => SolverConfig::default(),
            SolverChoice::Smoothed => SolverConfig::smoothed(),
        };
        if let Some(m) = self.max_iterations {
            solver.max_iterations = m;
        }
        let mut spec = ModelSpec::new(nonlinear, linear)
            .with_knots(self.degree, self.knots)
            .with_penalty(self.gamma, self.lambda)
            .with_solver(solver)
            .with_standardize(!self.no_standardize);
        spec.penalty.penalize_clinical = self.penalize_clinical;
        Ok(spec)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    /// Comma separated γ values; defaults to ten log-spaced values on [1e-3, 10].
    #[arg(long)]
    pub gamma_grid: Option<String>,
    /// Comma separated λ values; defaults to ten log-spaced values on [1e-3, 10].
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

impl GridArgs {
    pub fn grid(&self, seed: u64, threads: usize) -> Result<TuningGrid<f64>, String> {
        let mut grid = TuningGrid::default();
        if let Some(g) = &self.gamma_grid {
            grid.gamma_values = parse_list(g)?;
        }
        if let Some(l) = &self.lambda_grid {
            grid.lambda_values = parse_list(l)?;
        }
        Ok(grid.with_folds(self.folds).with_seed(seed).with_threads(threads))
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect()
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Choose γ and λ over the grid instead of using --gamma/--lambda.
    #[arg(long, value_enum)]
    pub tune: Option<CriterionChoice>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = CriterionChoice::Cv)]
    pub criterion: CriterionChoice,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// model.json written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Headed CSV; outcome columns are not needed.
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the clinical column names stored in the model.
    #[arg(long)]
    pub clinical_cols: Option<String>,
    /// Defaults to the feature column names stored in the model.
    #[arg(long)]
    pub feature_cols: Option<String>,
    /// Copied into the output next to each score.
    #[arg(long)]
    pub id_col: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Saved model. Scored directly on --data, or, with --repeats, its
    /// specification and penalties are refitted on every training split.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training fraction of each split.
    #[arg(long, default_value_t = 0.6)]
    pub split: f64,
    /// Split events and censored subjects separately.
    #[arg(long)]
    pub stratify_status: bool,
    /// Number of random splits; 0 scores the saved model on --data.
    #[arg(long, default_value_t = 0)]
    pub repeats: usize,
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Tune on each training split.
    #[arg(long, value_enum)]
    pub tune: Option<CriterionChoice>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignChoice {
    Estimation,
    Selection,
    Highdim,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub design: DesignChoice,
    /// Feature correlation (selection and highdim).
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Size of the nonzero feature coefficients (selection).
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Feature count (highdim).
    #[arg(long, default_value_t = 100)]
    pub d: usize,
    /// True curve of the estimation design: linear_2x, quadratic_x2,
    /// quadratic_2x2 or cubic_hinge.
    #[arg(long, default_value = "quadratic_x2")]
    pub phi: String,
    /// Training sample size; defaults to the design's.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Comma separated subset of the design's models, e.g. `Lasso-PL,Lasso-L`.
    #[arg(long)]
    pub models: Option<String>,
    /// Overrides the design's γ grid.
    #[arg(long)]
    pub gamma_grid: Option<String>,
    /// Overrides the design's λ grid.
    #[arg(long)]
    pub lambda_grid: Option<String>,
}
