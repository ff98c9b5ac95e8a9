//! Command-line interface: argument definitions and command handlers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ssldro_core::data::{
    build_support, is_class_label, LabeledExample, Standardizer, UnlabeledExample,
};
use ssldro_core::linalg::{dot, Cholesky};
use ssldro_core::loss::Loss;
use ssldro_core::objective::{inner_max_exact, SmoothingConfig};
use ssldro_core::rwp::{
    select_delta, D1Moments, Density, GaussianDensity, LimitPool, SelectedDelta,
};
use ssldro_core::solver::{
    accuracy, cross_validate_delta, exact_train, mean_loss, sgd_train, Averaging, CvConfig,
    CvMetric, CvResult, ExactConfig, GradientMode, SgdConfig, Trainer,
};
use ssldro_core::transport::TransportCost;

use crate::csv_io::{load_labeled, load_unlabeled, CsvSchema};
use crate::error::{CliError, CliResult};
use crate::experiment::{table1, theorem1_d1, theorem1_rate, Table1Config};
use crate::model_file::{fmt_real, ModelFile, Preprocessing};
use crate::report::RunReport;

/// Largest support accepted by `train --exact`.
pub const EXACT_SUPPORT_CAP: usize = 100_000;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SSL_DRO_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ssldro",
    version,
    about = "Semi-supervised distributionally robust classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it to a file.
    Train(TrainCmd),
    /// Evaluate a saved model on labeled data.
    Eval(EvalCmd),
    /// Choose the radius by cross-validation or by the RWP quantile rule.
    SelectDelta(SelectDeltaCmd),
    /// Solve the inner maximization exactly and dump the transport plan.
    WorstCase(WorstCaseCmd),
    /// Run a multi-seed experiment.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Logistic,
    Squared,
}

impl From<LossArg> for Loss {
    fn from(l: LossArg) -> Loss {
        match l {
            LossArg::Logistic => Loss::Logistic,
            LossArg::Squared => Loss::Squared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientArg {
    Mlmc,
    ExactSample,
    FullBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Loss,
    Accuracy,
}

impl From<MetricArg> for CvMetric {
    fn from(m: MetricArg) -> CvMetric {
        match m {
            MetricArg::Loss => CvMetric::Loss,
            MetricArg::Accuracy => CvMetric::Accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainerArg {
    Exact,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectMethod {
    Cv,
    Rwp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityArg {
    /// Gaussian with the mean and covariance of the pooled predictors.
    Fitted,
    /// Standard normal.
    Standard,
}

/// How to read data files.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Field delimiter (a single ASCII character).
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Skip the first row of every data file.
    #[arg(long)]
    pub header: bool,
}

impl DataArgs {
    pub fn schema(&self, classification: bool) -> CliResult<CsvSchema> {
        if !self.delimiter.is_ascii() {
            return Err(CliError::usage("--delimiter must be an ASCII character"));
        }
        Ok(CsvSchema {
            has_label: true,
            delimiter: self.delimiter as u8,
            header: self.header,
            classification,
        })
    }
}

/// Feature preprocessing.
#[derive(Debug, Clone, Args, Serialize)]
pub struct PrepArgs {
    /// Standardize features using labeled + unlabeled predictors.
    #[arg(long)]
    pub standardize: bool,
    /// Append a constant-1 feature.
    #[arg(long)]
    pub intercept: bool,
}

/// Objective and optimizer settings.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Loss (default logistic; `select-delta --method rwp` uses squared).
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Norm index q of the transport cost ||x - x'||_q^rho.
    #[arg(long, default_value_t = 2.0)]
    pub cost_q: f64,
    /// Power rho of the transport cost.
    #[arg(long, default_value_t = 2.0)]
    pub cost_rho: f64,
    /// Smoothing temperature (default: 1 / ln |support|, at least 1e-4).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// SGD iterations.
    #[arg(long, default_value_t = 50_000)]
    pub iters: usize,
    /// Gradient draws averaged per SGD step.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Step size a / (b + k): numerator.
    #[arg(long, default_value_t = 1.0)]
    pub step_a: f64,
    /// Step size a / (b + k): offset.
    #[arg(long, default_value_t = 10.0)]
    pub step_b: f64,
    /// Multiplier on the lambda step.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_step_scale: f64,
    #[arg(long, value_enum, default_value_t = GradientArg::Mlmc)]
    pub gradient: GradientArg,
    /// Average the final fraction of SGD iterates (0 disables averaging).
    #[arg(long, default_value_t = 0.25)]
    pub tail_average: f64,
    /// Projected-gradient tolerance of the exact solver.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Iteration cap of the exact solver.
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
}

impl ModelArgs {
    pub fn transport_cost(&self) -> CliResult<TransportCost> {
        Ok(TransportCost::new(self.cost_q, self.cost_rho)?)
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            a: self.step_a,
            b: self.step_b,
            iterations: self.iters,
            batch: self.batch,
            averaging: if self.tail_average > 0.0 {
                Averaging::Tail(self.tail_average)
            } else {
                Averaging::None
            },
            seed: self.seed,
            mode: match self.gradient {
                GradientArg::Mlmc => GradientMode::Mlmc,
                GradientArg::ExactSample => GradientMode::ExactSample,
                GradientArg::FullBatch => GradientMode::FullBatch,
            },
            lambda_step_scale: self.lambda_step_scale,
            ..SgdConfig::default()
        }
    }

    pub fn exact(&self) -> ExactConfig {
        ExactConfig {
            tolerance: self.tolerance,
            max_iter: self.max_iter,
        }
    }

    pub fn loss(&self) -> LossArg {
        self.loss.unwrap_or(LossArg::Logistic)
    }

    fn classification(&self) -> bool {
        self.loss() == LossArg::Logistic
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainCmd {
    #[arg(long)]
    pub labeled: PathBuf,
    /// Unlabeled predictors (labels in this file, if any, are ignored with --unlabeled-has-label).
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// The unlabeled file has a label column to drop.
    #[arg(long)]
    pub unlabeled_has_label: bool,
    /// Radius of the transport neighborhood.
    #[arg(long)]
    pub delta: f64,
    /// Minimize with the deterministic full-gradient solver instead of SGD.
    #[arg(long)]
    pub exact: bool,
    /// Labeled test data for the report.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Labeled training data, to report the training loss as well.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectDeltaCmd {
    #[arg(long, value_enum)]
    pub method: SelectMethod,
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled_has_label: bool,
    /// Candidate radii for cross-validation, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Loss)]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value_t = TrainerArg::Exact)]
    pub trainer: TrainerArg,
    /// Level of the RWP rule: the radius is the (1 - alpha) quantile.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Null parameter for the RWP rule, comma separated (default: least squares).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub beta_star: Option<Vec<f64>>,
    /// Predictor density entering the limit law (dimension 2 and up).
    #[arg(long, value_enum, default_value_t = DensityArg::Fitted)]
    pub density: DensityArg,
    /// Resampled (X, e) pairs in the limit-law pool.
    #[arg(long, default_value_t = 10_000)]
    pub pool: usize,
    /// Limit-law draws for the quantile.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// N / n (default: from the data files).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WorstCaseCmd {
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled_has_label: bool,
    #[arg(long)]
    pub delta: f64,
    /// Coefficients, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        conflicts_with = "model",
        required_unless_present = "model"
    )]
    pub beta: Option<Vec<f64>>,
    /// Take coefficients, loss, cost and preprocessing from a model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LossArg::Logistic)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 2.0)]
    pub cost_q: f64,
    #[arg(long, default_value_t = 2.0)]
    pub cost_rho: f64,
    /// Plan rows `u,v,mass,cost` go here (default: in the report).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCmd {
    /// Repeated random splits with cross-validated radius.
    Table1(Table1Cmd),
    /// Simulated RWP statistic against its one-dimensional limit.
    RwpD1(RwpD1Cmd),
    /// Scaling of the RWP statistic with n, against the sampled limit law.
    RwpRate(RwpRateCmd),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Table1Cmd {
    /// Labeled file to split.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub labeled_size: usize,
    #[arg(long, default_value_t = 200)]
    pub unlabeled_size: usize,
    #[arg(long, default_value_t = 329)]
    pub test_size: usize,
    #[arg(long, default_value_t = 200)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value_t = MetricArg::Loss)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 2.0)]
    pub cost_q: f64,
    #[arg(long, default_value_t = 2.0)]
    pub cost_rho: f64,
    /// Use raw features instead of standardized ones.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub no_intercept: bool,
    /// Include every per-seed outcome in the report.
    #[arg(long)]
    pub runs: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub csv: DataArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RwpD1Cmd {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RwpRateCmd {
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub pool: usize,
    #[arg(long, default_value_t = 10_000)]
    pub limit_draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Caps the global rayon pool at `SSL_DRO_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::usage(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    // A second initialization in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Runs a parsed command; `args` is echoed into the report.
pub fn run(cli: Cli, args: Vec<String>) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(c) => cmd_train(&c, args),
        Command::Eval(c) => cmd_eval(&c, args),
        Command::SelectDelta(c) => cmd_select_delta(&c, args),
        Command::WorstCase(c) => cmd_worst_case(&c, args),
        Command::Experiment(ExperimentCmd::Table1(c)) => cmd_table1(&c, args),
        Command::Experiment(ExperimentCmd::RwpD1(c)) => cmd_rwp_d1(&c, args),
        Command::Experiment(ExperimentCmd::RwpRate(c)) => cmd_rwp_rate(&c, args),
    }
}

fn echo<T: Serialize>(cmd: &T) -> serde_json::Map<String, Value> {
    match serde_json::to_value(cmd) {
        Ok(Value::Object(m)) => m,
        _ => serde_json::Map::new(),
    }
}

fn load_unlabeled_opt(
    path: Option<&Path>,
    has_label: bool,
    schema: CsvSchema,
) -> CliResult<Vec<UnlabeledExample>> {
    match path {
        Some(p) => load_unlabeled(
            p,
            CsvSchema {
                has_label,
                classification: false,
                ..schema
            },
        ),
        None => Ok(Vec::new()),
    }
}

/// Fits the preprocessing on labeled + unlabeled predictors and applies it.
fn prepare(
    prep: &PrepArgs,
    labeled: &[LabeledExample],
    unlabeled: &[UnlabeledExample],
) -> CliResult<(Preprocessing, Vec<LabeledExample>, Vec<UnlabeledExample>)> {
    let standardizer = if prep.standardize {
        Some(Standardizer::fit(
            labeled
                .iter()
                .map(|ex| ex.x.as_slice())
                .chain(unlabeled.iter().map(|ex| ex.x.as_slice())),
        )?)
    } else {
        None
    };
    let p = Preprocessing {
        standardizer,
        intercept: prep.intercept,
    };
    let lab = labeled
        .iter()
        .map(|ex| LabeledExample::new(p.apply(&ex.x), ex.y))
        .collect();
    let unl = unlabeled
        .iter()
        .map(|ex| UnlabeledExample::new(p.apply(&ex.x)))
        .collect();
    Ok((p, lab, unl))
}

/// Mean loss and, for `±1` labels, accuracy of a saved model on raw data.
pub fn evaluate(model: &ModelFile, data: &[LabeledExample]) -> CliResult<(f64, Option<f64>)> {
    if data.is_empty() {
        return Err(CliError::data("evaluation data is empty"));
    }
    let rows = data
        .iter()
        .map(|ex| Ok(LabeledExample::new(model.features(&ex.x)?, ex.y)))
        .collect::<CliResult<Vec<_>>>()?;
    let loss = mean_loss(model.loss, &model.beta, &rows);
    let acc = rows
        .iter()
        .all(|ex| is_class_label(ex.y))
        .then(|| accuracy(&model.beta, &rows));
    Ok((loss, acc))
}

pub fn cmd_train(c: &TrainCmd, args: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    let schema = c.data.schema(c.model.classification())?;
    let labeled_raw = load_labeled(&c.labeled, schema)?;
    let unlabeled_raw = load_unlabeled_opt(c.unlabeled.as_deref(), c.unlabeled_has_label, schema)?;
    let (prep, labeled, unlabeled) = prepare(&c.prep, &labeled_raw, &unlabeled_raw)?;
    let support = build_support(&labeled, &unlabeled)?;
    let tc = c.model.transport_cost()?;
    let eps = c
        .model
        .epsilon
        .unwrap_or_else(|| SmoothingConfig::default_epsilon(support.len()));
    let smoothing = SmoothingConfig::new(eps, c.delta)?;
    let loss: Loss = c.model.loss().into();
    let trained = if c.exact {
        if support.len() > EXACT_SUPPORT_CAP {
            return Err(ssldro_core::Error::CapExceeded {
                size: support.len(),
                cap: EXACT_SUPPORT_CAP,
            }
            .into());
        }
        exact_train(&support, tc, loss, smoothing, &c.model.exact())?
    } else {
        sgd_train(&support, tc, loss, smoothing, &c.model.sgd())?
    };
    let file = ModelFile::from_model(&trained, c.model.cost_q, c.model.cost_rho, prep);
    file.save(&c.out)?;

    let mut report = RunReport::new("train", args);
    report.config = echo(c);
    report.config("epsilon_resolved", eps);
    report.seed = Some(c.model.seed);
    report.metrics.train_loss = Some(evaluate(&file, &labeled_raw)?.0);
    if let Some(t) = &c.test {
        let test = load_labeled(t, schema)?;
        let (l, a) = evaluate(&file, &test)?;
        report.metrics.test_loss = Some(l);
        report.metrics.test_accuracy = a;
    }
    report
        .diag("support_size", support.len())
        .diag("iterations", trained.iterations)
        .diag("converged", trained.converged)
        .diag("lambda", trained.lambda)
        .diag("fingerprint", format!("{:016x}", trained.fingerprint))
        .diag("trace_len", trained.trace.len())
        .diag("final_objective", trained.trace.last().copied());
    report.timing_seconds = start.elapsed().as_secs_f64();
    report.emit(c.report.as_deref())
}

pub fn cmd_eval(c: &EvalCmd, args: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    let model = ModelFile::load(&c.model)?;
    let schema = c.data.schema(model.loss == Loss::Logistic)?;
    let test = load_labeled(&c.test, schema)?;
    let mut report = RunReport::new("eval", args);
    report.config = echo(c);
    let (l, a) = evaluate(&model, &test)?;
    report.metrics.test_loss = Some(l);
    report.metrics.test_accuracy = a;
    if let Some(p) = &c.labeled {
        report.metrics.train_loss = Some(evaluate(&model, &load_labeled(p, schema)?)?.0);
    }
    report
        .diag("test_rows", test.len())
        .diag("fingerprint", format!("{:016x}", model.fingerprint));
    report.timing_seconds = start.elapsed().as_secs_f64();
    report.emit(c.report.as_deref())
}

/// The CV table as reported by `select-delta --method cv`.
pub fn cv_table_json(res: &CvResult) -> Value {
    Value::Array(
        res.table
            .iter()
            .map(|r| {
                json!({
                    "delta": r.delta,
                    "mean": r.mean,
                    "std_error": r.std_error,
                    "fold_scores": r.fold_scores,
                })
            })
            .collect(),
    )
}

/// Least-squares coefficients of `y` on `x`.
pub fn least_squares(data: &[LabeledExample]) -> CliResult<Vec<f64>> {
    let d = data
        .first()
        .ok_or_else(|| CliError::data("no labeled rows"))?
        .dim();
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d];
    for ex in data {
        for i in 0..d {
            xty[i] += ex.x[i] * ex.y;
            for j in 0..d {
                xtx[i * d + j] += ex.x[i] * ex.x[j];
            }
        }
    }
    Ok(Cholesky::new(&xtx, d)?.solve(&xty))
}

pub fn cmd_select_delta(c: &SelectDeltaCmd, args: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    let loss = c.model.loss.unwrap_or(match c.method {
        SelectMethod::Cv => LossArg::Logistic,
        SelectMethod::Rwp => LossArg::Squared,
    });
    let schema = c.data.schema(loss == LossArg::Logistic)?;
    let mut report = RunReport::new("select-delta", args);
    report.config = echo(c);
    report.config(
        "loss_resolved",
        serde_json::to_value(loss).unwrap_or(Value::Null),
    );
    match c.method {
        SelectMethod::Cv => {
            if c.grid.is_empty() {
                return Err(CliError::usage("--method cv needs --grid"));
            }
            let labeled_raw = load_labeled(&c.labeled, schema)?;
            let unlabeled_raw =
                load_unlabeled_opt(c.unlabeled.as_deref(), c.unlabeled_has_label, schema)?;
            let (_, labeled, unlabeled) = prepare(&c.prep, &labeled_raw, &unlabeled_raw)?;
            let cfg = CvConfig {
                folds: c.folds,
                metric: c.metric.into(),
                trainer: match c.trainer {
                    TrainerArg::Exact => Trainer::Exact(c.model.exact()),
                    TrainerArg::Sgd => Trainer::Sgd(c.model.sgd()),
                },
                tc: c.model.transport_cost()?,
                loss: loss.into(),
                epsilon: c.model.epsilon,
            };
            let res = cross_validate_delta(&labeled, &unlabeled, &c.grid, &cfg)?;
            report.seed = Some(c.model.seed);
            report
                .diag("delta_star", res.delta_best)
                .diag("table", cv_table_json(&res));
        }
        SelectMethod::Rwp => {
            if loss != LossArg::Squared {
                return Err(CliError::usage("--method rwp supports only --loss squared"));
            }
            let alpha = c
                .alpha
                .ok_or_else(|| CliError::usage("--method rwp needs --alpha"))?;
            let labeled_raw = load_labeled(&c.labeled, schema)?;
            let unlabeled_raw =
                load_unlabeled_opt(c.unlabeled.as_deref(), c.unlabeled_has_label, schema)?;
            let (_, labeled, unlabeled) = prepare(&c.prep, &labeled_raw, &unlabeled_raw)?;
            let n = labeled.len();
            let d = labeled[0].dim();
            let beta_star = match &c.beta_star {
                Some(b) if b.len() != d => {
                    return Err(CliError::data(format!(
                        "--beta-star has {} entries, data has {d}",
                        b.len()
                    )))
                }
                Some(b) => b.clone(),
                None => least_squares(&labeled)?,
            };
            let gamma = c.gamma.unwrap_or((n + unlabeled.len()) as f64 / n as f64);
            report.seed = Some(c.model.seed);
            report
                .diag("beta_star", beta_star.clone())
                .diag("gamma", gamma);
            let sel = rwp_delta(
                alpha,
                &labeled,
                &unlabeled,
                &beta_star,
                gamma,
                c,
                &mut report,
            )?;
            report
                .diag("delta_star", sel.delta)
                .diag("raw_quantile", sel.raw_quantile)
                .diag("exponent", sel.exponent);
        }
    }
    report.timing_seconds = start.elapsed().as_secs_f64();
    report.emit(c.report.as_deref())
}

fn rwp_delta(
    alpha: f64,
    labeled: &[LabeledExample],
    unlabeled: &[UnlabeledExample],
    beta_star: &[f64],
    gamma: f64,
    c: &SelectDeltaCmd,
    report: &mut RunReport,
) -> CliResult<SelectedDelta> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::usage("--alpha must be in (0, 1)"));
    }
    let n = labeled.len();
    let d = beta_star.len();
    if d == 1 {
        let kappa = D1Moments::plug_in(labeled, beta_star[0])?.kappa();
        let chi = ChiSquared::new(1.0)
            .expect("one degree of freedom")
            .inverse_cdf(1.0 - alpha);
        report.diag("kappa", kappa).diag("chi2_quantile", chi);
        return Ok(SelectedDelta {
            delta: kappa * chi / n as f64,
            raw_quantile: kappa * chi,
            exponent: 1.0,
        });
    }
    let density: Box<dyn Density> = match c.density {
        DensityArg::Standard => Box::new(GaussianDensity::standard(d)),
        DensityArg::Fitted => Box::new(GaussianDensity::fit(
            labeled
                .iter()
                .map(|ex| ex.x.as_slice())
                .chain(unlabeled.iter().map(|ex| ex.x.as_slice())),
        )?),
    };
    let pairs: Vec<(Vec<f64>, f64)> = labeled
        .iter()
        .map(|ex| (ex.x.clone(), ex.y - dot(beta_star, &ex.x)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(c.model.seed);
    let pool = LimitPool::from_sampler(
        c.pool,
        |r: &mut ChaCha8Rng| pairs[r.random_range(0..pairs.len())].clone(),
        beta_star,
        gamma,
        density.as_ref(),
        &mut rng,
    )?;
    report.diag("pool_size", pool.len());
    Ok(select_delta(
        alpha,
        n,
        d,
        c.samples,
        |r| pool.sample(r).map(|s| s.value),
        &mut rng,
    )?)
}

pub fn cmd_worst_case(c: &WorstCaseCmd, args: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    let model = c.model.as_deref().map(ModelFile::load).transpose()?;
    let (loss, tc) = match &model {
        Some(m) => (m.loss, TransportCost::new(m.cost_q, m.cost_rho)?),
        None => (c.loss.into(), TransportCost::new(c.cost_q, c.cost_rho)?),
    };
    let schema = c.data.schema(loss == Loss::Logistic)?;
    let labeled_raw = load_labeled(&c.labeled, schema)?;
    let unlabeled_raw = load_unlabeled_opt(c.unlabeled.as_deref(), c.unlabeled_has_label, schema)?;
    let (labeled, unlabeled, beta) = match &model {
        Some(m) => {
            let lab = labeled_raw
                .iter()
                .map(|ex| Ok(LabeledExample::new(m.features(&ex.x)?, ex.y)))
                .collect::<CliResult<Vec<_>>>()?;
            let unl = unlabeled_raw
                .iter()
                .map(|ex| Ok(UnlabeledExample::new(m.features(&ex.x)?)))
                .collect::<CliResult<Vec<_>>>()?;
            (lab, unl, m.beta.clone())
        }
        None => (
            labeled_raw,
            unlabeled_raw,
            c.beta.clone().unwrap_or_default(),
        ),
    };
    let support = build_support(&labeled, &unlabeled)?;
    if beta.len() != support.dim() {
        return Err(CliError::data(format!(
            "beta has {} entries, data has {} features",
            beta.len(),
            support.dim()
        )));
    }
    let wc = inner_max_exact(&support, &beta, c.delta, &tc, loss)?;

    let n = labeled.len();
    let mut column = vec![0.0; n];
    let mut rows = Vec::with_capacity(wc.plan.entries.len());
    for &(u, v, mass) in &wc.plan.entries {
        let p = support.point(u);
        let cost = tc.cost(&p.x, p.y, &labeled[v].x, labeled[v].y).to_f64();
        column[v] += mass;
        rows.push((u, v, mass, cost));
    }
    let total: f64 = column.iter().sum();
    let marginal_err = column
        .iter()
        .map(|m| (m - 1.0 / n as f64).abs())
        .fold(0.0, f64::max);
    let budget: f64 = rows.iter().map(|r| r.2 * r.3).sum();
    if (total - 1.0).abs() > 1e-9 || marginal_err > 1e-9 {
        return Err(CliError::Numerical(format!(
            "plan marginals off: total {total}, worst column error {marginal_err}"
        )));
    }
    if budget > c.delta + 1e-9 * c.delta.max(1.0) {
        return Err(CliError::Numerical(format!(
            "plan spends {budget} > delta {}",
            c.delta
        )));
    }

    let mut report = RunReport::new("worst-case", args);
    report.config = echo(c);
    report
        .diag("objective", wc.value)
        .diag("budget_used", budget)
        .diag("total_mass", total)
        .diag("max_marginal_error", marginal_err)
        .diag("support_size", support.len())
        .diag("marginal", wc.marginal.clone());
    let table = rows
        .iter()
        .map(|(u, v, m, cost)| json!({"u": u, "v": v, "mass": m, "cost": cost}))
        .collect::<Vec<_>>();
    match &c.out {
        Some(path) => {
            let mut text = String::from("u,v,mass,cost\n");
            for (u, v, m, cost) in &rows {
                text.push_str(&format!("{u},{v},{},{}\n", fmt_real(*m), fmt_real(*cost)));
            }
            std::fs::write(path, text).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            report.diag("plan_rows", rows.len());
        }
        None => {
            report.diag("plan", Value::Array(table));
        }
    }
    report.timing_seconds = start.elapsed().as_secs_f64();
    report.emit(c.report.as_deref())
}

pub fn cmd_table1(c: &Table1Cmd, args: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    let data = load_labeled(&c.data, c.csv.schema(true)?)?;
    let mut cfg = Table1Config {
        labeled: c.labeled_size,
        unlabeled: c.unlabeled_size,
        test: c.test_size,
        first_seed: c.first_seed,
        seeds: c.seeds,
        folds: c.folds,
        metric: c.metric.into(),
        tc: TransportCost::new(c.cost_q, c.cost_rho)?,
        standardize: !c.no_standardize,
        intercept: !c.no_intercept,
        ..Table1Config::default()
    };
    if let Some(g) = &c.grid {
        cfg.grid = g.clone();
    }
    let summary = table1(&data, &cfg)?;
    let mut report = RunReport::new("experiment table1", args);
    report.config = echo(c);
    report.config("grid_resolved", cfg.grid.clone());
    report.seed = Some(c.first_seed);
    report.metrics.train_loss = Some(summary.train_loss_mean);
    report.metrics.test_loss = Some(summary.test_loss_mean);
    report.metrics.test_accuracy = Some(summary.test_accuracy_mean);
    report
        .diag("train_loss_sd", summary.train_loss_sd)
        .diag("test_loss_sd", summary.test_loss_sd)
        .diag("test_accuracy_sd", summary.test_accuracy_sd);
    if c.runs {
        report.diag(
            "runs",
            serde_json::to_value(&summary.runs).unwrap_or(Value::Null),
        );
    }
    report.timing_seconds = start.elapsed().as_secs_f64();
    report.emit(c.report.as_deref())
}

pub fn cmd_rwp_d1(c: &RwpD1Cmd, args: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    let check = theorem1_d1(c.n, c.reps, c.seed)?;
    let mut report = RunReport::new("experiment rwp-d1", args);
    report.config = echo(c);
    report.seed = Some(c.seed);
    report.diagnostics = echo(&check);
    report.timing_seconds = start.elapsed().as_secs_f64();
    report.emit(c.report.as_deref())
}

pub fn cmd_rwp_rate(c: &RwpRateCmd, args: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    if c.d < 2 {
        return Err(CliError::usage("rwp-rate needs --d >= 2"));
    }
    let check = theorem1_rate(c.d, &c.ns, c.reps, c.pool, c.limit_draws, c.seed)?;
    let mut report = RunReport::new("experiment rwp-rate", args);
    report.config = echo(c);
    report.seed = Some(c.seed);
    report.diagnostics = echo(&check);
    report.timing_seconds = start.elapsed().as_secs_f64();
    report.emit(c.report.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_train_defaults() {
        let cli = Cli::try_parse_from([
            "ssldro",
            "train",
            "--labeled",
            "a.csv",
            "--delta",
            "0.1",
            "--out",
            "m.txt",
        ])
        .unwrap();
        let Command::Train(t) = cli.command else {
            panic!()
        };
        assert_eq!(t.model.iters, 50_000);
        assert_eq!(t.model.batch, 8);
        assert_eq!(t.model.sgd().averaging, Averaging::Tail(0.25));
        assert!(!t.exact);
    }

    #[test]
    fn missing_labeled_is_a_usage_error() {
        let e = Cli::try_parse_from(["ssldro", "train", "--delta", "0.1", "--out", "m.txt"])
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn least_squares_recovers_a_line() {
        let data: Vec<LabeledExample> = (0..6)
            .map(|i| {
                let t = i as f64;
                LabeledExample::new(vec![t, 1.0], 2.0 * t - 1.0)
            })
            .collect();
        let b = least_squares(&data).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-10 && (b[1] + 1.0).abs() < 1e-10);
    }
}
