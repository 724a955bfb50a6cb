//! `trajopt`: dataset generation, training, planning, benchmarking and
//! trajectory rendering.
//!
//! Errors are printed to stderr as one JSON object
//! `{"error":{"kind":…,"message":…}}`; usage errors exit with 2, all others
//! with 1.

mod config;
mod inspect;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use trajopt::benchmark::{bench_compare, BenchSettings, REPORT_VERSION};
use trajopt::datagen::{generate_dataset, load_dataset, DatasetConfig, Split};
use trajopt::neural::{load_model, save_model, train, ModelConfig, ModelParams};
use trajopt::planner::{cold_start, plan, plan_with_model, InitialGuessModel, PlanRequest, PlanResult};
use trajopt::{json, Error, SplineTrajectory, WaypointPath};

use crate::config::{Config, CONFIG_ENV};

const EXAMPLE: &str = include_str!("../assets/example6.json");

#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new("missing_file", message)
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            "usage" | "config" | "missing_file" | "model_mismatch" => 2,
            _ => 1,
        }
    }

    fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind, "message": self.message } }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Parameter(_) | Error::Knots(_) | Error::Domain { .. } | Error::Index { .. } => "invalid_input",
            Error::InfeasiblePath(_) => "infeasible_path",
            Error::PlanningFailed(_) => "planning_failed",
            Error::UnsupportedLength { .. } | Error::UnsupportedConfig(_) => "model_mismatch",
            Error::Version { .. } | Error::Corrupt(_) => "corrupt_model",
            Error::Record { .. } | Error::Dataset(_) => "dataset",
            Error::Diverged { .. } => "diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            _ => "numerical",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "trajopt", version, about = "Time-jerk optimal joint trajectories with learned warm starts")]
struct Cli {
    /// TOML config (limits, lambda, solver, model and training settings).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve random problems and write a dataset (`<out>.jsonl`, `<out>.manifest.json`).
    Generate(GenerateArgs),
    /// Train a warm-start model on a dataset.
    Train(TrainArgs),
    /// Plan one path and print the result as JSON.
    Plan(PlanArgs),
    /// Paired cold/warm comparison over random problems.
    #[command(after_help = bench_help())]
    Bench(BenchArgs),
    /// Render a trajectory to SVG and sampled CSV.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Output stem.
    #[arg(long)]
    out: PathBuf,
    /// Problems to attempt.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    min_waypoints: usize,
    #[arg(long, default_value_t = 8)]
    max_waypoints: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset stem written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// JSON array of waypoints, each an array of joint values; the bundled
    /// 6-waypoint example when absent.
    #[arg(long)]
    waypoints_file: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Warm-start model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Start from the cold initialization even when a model is given.
    #[arg(long)]
    cold: bool,
    /// Write the SQP iteration trace of the final solve as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Path lengths to sample.
    #[arg(long, value_delimiter = ',', default_values_t = [6, 12, 24, 48])]
    lengths: Vec<usize>,
    /// Problems per length.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Warm-start model; cold runs only when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for report.csv, summary.csv and timings.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Dataset stem to read a record from.
    #[arg(long, requires = "record", conflicts_with = "result")]
    dataset: Option<PathBuf>,
    /// Problem index of the record.
    #[arg(long)]
    record: Option<usize>,
    /// A `plan` result JSON.
    #[arg(long)]
    result: Option<PathBuf>,
    #[arg(long)]
    svg: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value_t = 200)]
    samples: usize,
}

fn bench_help() -> String {
    format!(
        "CSV layout version {REPORT_VERSION}.\n\
         report.csv: problem,waypoints,method,status,converged,iterations,objective,jerk,duration,feasible,problem_hash\n\
         summary.csv: kind,method,waypoints,runs,converged,median_iterations,iqr_iterations,median_objective,\
         iqr_objective,median_cold_iterations,median_warm_iterations,warm_wins,win_rate,\
         median_iteration_reduction_pct,converged_pairs,max_objective_excess,max_objective_excess_pct\n\
         timings.csv: problem,waypoints,method,warm_start_ns,sqp_ns\n\
         Methods: cold-sqp, warm-sqp, model-only."
    )
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::missing(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn model(path: &Path) -> CliResult<ModelParams> {
    if !path.exists() {
        return Err(CliError::missing(format!("model {}", path.display())));
    }
    Ok(load_model(path)?)
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    println!("{}", json::to_string(value)?);
    Ok(())
}

fn generate(cfg: &Config, args: GenerateArgs) -> CliResult {
    let dataset_config = DatasetConfig {
        lambda: cfg.lambda,
        solver: cfg.solver.clone(),
        ..DatasetConfig::new(args.n, args.min_waypoints..=args.max_waypoints, cfg.limits()?, args.seed)
    };
    if dataset_config.validate().is_err() {
        return Err(CliError::usage(dataset_config.validate().unwrap_err().to_string()));
    }
    let dataset = generate_dataset(&dataset_config, &args.out)?;
    let m = &dataset.manifest;
    print_json(&serde_json::json!({
        "attempted": m.attempted,
        "records": m.records,
        "discarded": m.discarded.len(),
        "train": m.counts.train,
        "validation": m.counts.validation,
        "test": m.counts.test,
    }))
}

fn train_cmd(cfg: &Config, args: TrainArgs) -> CliResult {
    let dataset = load_dataset(&args.data)?;
    let m = &dataset.manifest;
    let base = ModelConfig::new(m.limits.num_joints(), m.max_waypoints);
    let s = &cfg.model;
    let model_config = ModelConfig {
        d_model: s.d_model.unwrap_or(base.d_model),
        heads: s.heads.unwrap_or(base.heads),
        context_layers: s.context_layers.unwrap_or(base.context_layers),
        source_layers: s.source_layers.unwrap_or(base.source_layers),
        ffn_hidden: s.ffn_hidden.or(base.ffn_hidden),
        dropout: s.dropout.unwrap_or(base.dropout),
        ..base
    };
    model_config.validate().map_err(|e| CliError::config(e.to_string()))?;
    let mut hyper = cfg.train.clone();
    if let Some(e) = args.epochs {
        hyper.epochs = e;
    }
    if let Some(seed) = args.seed {
        hyper.seed = seed;
    }
    let train_set = dataset.samples(Split::Train)?;
    let validation = dataset.samples(Split::Validation)?;
    match train(&train_set, &validation, &model_config, &hyper) {
        Ok(trained) => {
            save_model(&trained.params, &args.out)?;
            if let Some(h) = &args.history {
                write(h, trained.history.to_csv())?;
            }
            print_json(&serde_json::json!({
                "epochs": trained.history.epochs.len(),
                "best": trained.history.best(),
            }))
        }
        Err(Error::Diverged { epoch, loss, history }) => {
            if let Some(h) = &args.history {
                let partial = trajopt::neural::TrainingHistory { epochs: history.clone() };
                write(h, partial.to_csv())?;
            }
            Err(Error::Diverged { epoch, loss, history }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn plan_cmd(cfg: &Config, args: PlanArgs) -> CliResult {
    let text = match &args.waypoints_file {
        Some(p) => read(p)?,
        None => EXAMPLE.to_string(),
    };
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| CliError::new("invalid_input", format!("waypoints: {e}")))?;
    let path = WaypointPath::new(rows)?;
    let limits = cfg.limits()?;
    if path.num_joints() != limits.num_joints() {
        return Err(CliError::config(format!(
            "path has {} joints but the configured limits have {}",
            path.num_joints(),
            limits.num_joints()
        )));
    }
    let mut solver = cfg.solver.clone();
    solver.record_trace |= args.trace.is_some();
    let request = PlanRequest { lambda: args.lambda.unwrap_or(cfg.lambda), solver, ..PlanRequest::new(path, limits) };
    request.validate()?;
    let result: PlanResult = match (&args.model, args.cold) {
        (Some(m), false) => {
            let params = model(m)?;
            check_model(&params, request.limits.num_joints())?;
            plan_with_model(&request, &params)?
        }
        _ => plan(&request, &cold_start(&request.path, &request.limits)?)?,
    };
    if let Some(t) = &args.trace {
        let mut buf = Vec::new();
        result.solver.write_trace_csv(&mut buf)?;
        write(t, buf)?;
    }
    let text = json::to_string(&result)?;
    match &args.out {
        Some(p) => write(p, text + "\n"),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn check_model(params: &ModelParams, joints: usize) -> CliResult {
    if params.num_joints() != joints {
        return Err(CliError::new(
            "model_mismatch",
            format!("model expects {} joints, the configured limits have {joints}", params.num_joints()),
        ));
    }
    Ok(())
}

fn bench(cfg: &Config, args: BenchArgs) -> CliResult {
    if args.lengths.is_empty() || args.lengths.iter().any(|&l| l < 2) || args.n == 0 {
        return Err(CliError::usage("lengths must be at least 2 and n positive"));
    }
    if args.jobs == 0 {
        return Err(CliError::usage("jobs must be positive"));
    }
    let settings = BenchSettings {
        lambda: cfg.lambda,
        solver: cfg.solver.clone(),
        ..BenchSettings::new(args.lengths.clone(), args.n, cfg.limits()?, args.seed)
    };
    let params = args.model.as_deref().map(model).transpose()?;
    if let Some(p) = &params {
        check_model(p, settings.limits.num_joints())?;
    }
    let problems = settings.problems()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::new("io", e.to_string()))?;
    let report = pool.install(|| {
        bench_compare(&problems, params.as_ref().map(|p| p as &(dyn InitialGuessModel + Sync)), &settings)
    })?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::new("io", format!("{}: {e}", args.out.display())))?;
    write(&args.out.join("report.csv"), report.report_csv())?;
    write(&args.out.join("summary.csv"), report.summary_csv())?;
    write(&args.out.join("timings.csv"), report.timings_csv())?;
    print_json(&serde_json::json!({
        "problems": problems.len(),
        "rows": report.rows.len(),
        "comparisons": report.comparisons,
    }))
}

fn inspect_cmd(args: InspectArgs) -> CliResult {
    if args.samples < 2 {
        return Err(CliError::usage("at least 2 samples are required"));
    }
    let traj: SplineTrajectory = match (&args.dataset, args.record, &args.result) {
        (Some(stem), Some(index), None) => {
            let dataset = load_dataset(stem)?;
            let record = dataset
                .records
                .into_iter()
                .find(|r| r.index == index)
                .ok_or_else(|| CliError::usage(format!("dataset has no record with index {index}")))?;
            record.trajectory
        }
        (None, _, Some(p)) => {
            let result: PlanResult = serde_json::from_str(&read(p)?)
                .map_err(|e| CliError::new("invalid_input", format!("{}: {e}", p.display())))?;
            result.trajectory
        }
        _ => return Err(CliError::usage("give either --dataset with --record, or --result")),
    };
    write(&args.svg, inspect::position_svg(&traj, args.samples)?)?;
    write(&args.csv, inspect::samples_csv(&traj, args.samples)?)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Plan(a) => plan_cmd(&cfg, a),
        Command::Bench(a) => bench(&cfg, a),
        Command::Inspect(a) => inspect_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            let err = CliError::usage(first.trim_start_matches("error: "));
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
