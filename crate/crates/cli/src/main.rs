//! `rkfit` — simulate benchmark systems, corrupt trajectories with synthetic
//! measurement noise, fit dynamics jointly with the noise, evaluate the fits,
//! and drive whole config-defined experiment sweeps.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 validation error,
//! 3 divergence, 4 training finished without clean convergence (the
//! best-so-far model is still written).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use rkfit::corrupt::{add_gaussian_noise, add_student_t_noise, NoisyDataset};
use rkfit::experiment::{
    run_experiment, simulate_system, ExperimentConfig, ModelSpec, SimulateSpec,
};
use rkfit::io;
use rkfit::loss::LossConfig;
use rkfit::metrics::{forward_orbit_error, noise_error, noise_moments, vector_field_error};
use rkfit::optimize::{OptimizerOptions, StopReason};
use rkfit::systems::AnalyticSystem;
use rkfit::train::{train, TrainSpec};
use rkfit::{Error, Result};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_PARTIAL_CONVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "rkfit", version, about = "Learn dynamics from noisy time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a benchmark system and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Add synthetic measurement noise to a trajectory.
    Corrupt(CorruptArgs),
    /// Fit a model and per-sample noise to one or more datasets.
    Train(TrainArgs),
    /// Compute error metrics for a trained model against a dataset.
    Evaluate(EvaluateArgs),
    /// Integrate a trained model forward from a given state.
    Predict(PredictArgs),
    /// Sample a learned and/or analytic vector field on a plane grid.
    ExportField(ExportFieldArgs),
    /// Run a full simulate→corrupt→train→evaluate sweep from one config.
    RunExperiment(RunExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with `[system]` and `[simulate]` sections.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV (default `trajectory.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the gap-sampling seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Distribution {
    Gaussian,
    StudentT,
}

#[derive(Args)]
struct CorruptArgs {
    /// Input trajectory CSV, treated as ground truth.
    #[arg(long)]
    data: PathBuf,
    /// Noise amplitude as percent of per-coordinate sample deviation.
    #[arg(long)]
    percent: f64,
    #[arg(long, value_enum, default_value_t = Distribution::Gaussian)]
    distribution: Distribution,
    /// Degrees of freedom (student-t only, >= 3).
    #[arg(long)]
    dof: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset JSON (default `dataset.json`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset JSON file(s); several files share one vector field.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// TOML file with `[model]`, `[loss]`, `[optimizer]` sections.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default `.`): model.json, noise.json, trace.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the parameter-initialization seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Dataset JSON or plain trajectory CSV.
    #[arg(long)]
    data: PathBuf,
    /// Optional TOML with a `[system]` section for the true-field error;
    /// defaults to the system recorded in the dataset provenance.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which trained noise matrix to evaluate (multi-dataset training).
    #[arg(long, default_value_t = 0)]
    noise_index: usize,
    /// Output metrics JSON (default `metrics.json`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Initial state, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long)]
    t1: Option<f64>,
    /// Number of output samples; 1 writes just the initial state.
    #[arg(long)]
    samples: usize,
    /// Output CSV (default `prediction.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportFieldArgs {
    /// Trained model whose field is sampled (`fhat*` columns).
    #[arg(long)]
    model: Option<PathBuf>,
    /// TOML with a `[system]` section for analytic columns (`f*`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// The two grid axes, 1-based coordinate indices.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
    axes: Vec<usize>,
    /// Fixed values for the remaining coordinates, e.g. `x3=25`.
    #[arg(long, value_delimiter = ',')]
    fix: Vec<String>,
    /// Lower corner of the grid, `min_i,min_j`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    min: Vec<f64>,
    /// Upper corner of the grid, `max_i,max_j`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    max: Vec<f64>,
    /// Grid resolution per axis (>= 2).
    #[arg(long, value_delimiter = ',')]
    res: Vec<usize>,
    /// Output CSV (default `field.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunExperimentArgs {
    /// Experiment TOML config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::InvalidInput(_)
                | Error::ShapeMismatch(_)
                | Error::ConstantCoordinate { .. }
                | Error::DegenerateMetric(_) => EXIT_VALIDATION,
                Error::Divergence { .. } | Error::FixedPointNonConvergence { .. } => {
                    EXIT_DIVERGENCE
                }
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Corrupt(args) => cmd_corrupt(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::ExportField(args) => cmd_export_field(args),
        Command::RunExperiment(args) => cmd_run_experiment(args),
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// Sections `simulate` needs; a full experiment config works as-is, the
/// unrelated sections are ignored.
#[derive(Deserialize)]
struct SimulateFileConfig {
    system: AnalyticSystem,
    simulate: SimulateSpec,
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut config: SimulateFileConfig = load_toml(&args.config)?;
    if let Some(seed) = args.seed {
        config.simulate.seed = seed;
    }
    if config.simulate.samples < 2 {
        return Err(Error::InvalidInput(
            "simulate.samples must be >= 2".into(),
        ));
    }
    if config.simulate.x0.len() != config.system.dim() {
        return Err(Error::ShapeMismatch(format!(
            "x0 has {} entries but {} is {}-dimensional",
            config.simulate.x0.len(),
            config.system.name(),
            config.system.dim()
        )));
    }
    let traj = simulate_system(&config.system, &config.simulate)?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("trajectory.csv"));
    io::write_trajectory_csv(&out, &traj)?;
    println!(
        "wrote {} samples of {} to {}",
        traj.len(),
        config.system.name(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_corrupt(args: CorruptArgs) -> Result<ExitCode> {
    let truth = io::read_trajectory_csv(&args.data)?;
    let dataset = match args.distribution {
        Distribution::Gaussian => add_gaussian_noise(&truth, args.percent, args.seed)?,
        Distribution::StudentT => {
            let dof = args.dof.ok_or_else(|| {
                Error::InvalidInput("student-t noise requires --dof".into())
            })?;
            add_student_t_noise(&truth, args.percent, dof, args.seed)?
        }
    };
    let provenance = serde_json::json!({
        "source": args.data.display().to_string(),
        "distribution": match args.distribution {
            Distribution::Gaussian => "gaussian",
            Distribution::StudentT => "student-t",
        },
        "percent": args.percent,
        "dof": args.dof,
        "seed": args.seed,
    });
    let out = args.out.unwrap_or_else(|| PathBuf::from("dataset.json"));
    io::write_dataset(&out, &io::DatasetFile::from_dataset(&dataset, Some(provenance)))?;
    println!(
        "wrote {}% {} noise on {} samples to {}",
        args.percent,
        match args.distribution {
            Distribution::Gaussian => "gaussian",
            Distribution::StudentT => "student-t",
        },
        dataset.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Sections `train` needs; a full experiment config works as-is, the
/// unrelated sections are ignored.
#[derive(Serialize, Deserialize)]
struct TrainFileConfig {
    model: ModelSpec,
    #[serde(default)]
    loss: LossConfig,
    #[serde(default)]
    optimizer: OptimizerOptions,
    #[serde(default)]
    init_seed: u64,
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mut config: TrainFileConfig = load_toml(&args.config)?;
    if let Some(seed) = args.seed {
        config.init_seed = seed;
    }
    let datasets: Vec<NoisyDataset> = args
        .data
        .iter()
        .map(|p| io::read_dataset(p)?.to_dataset())
        .collect::<Result<_>>()?;
    let spec = TrainSpec {
        widths: config.model.widths.clone(),
        tableau: config.model.tableau.tableau(),
        loss: config.loss,
        optimizer: config.optimizer,
        init_seed: config.init_seed,
        smoothing_window: config.model.smoothing_window,
    };
    let result = train(&datasets, &spec)?;

    let out_dir = args.out.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    io::write_trace_csv(&out_dir.join("trace.csv"), &result.report.trace)?;
    io::write_json(
        &out_dir.join("noise.json"),
        &io::NoiseFile::from_estimates(&result.noises),
    )?;
    let hash_input = serde_json::to_string(&config).expect("config serializes");
    let summary = io::TrainingSummary::from_report(&result.report, Some("trace.csv".into()));
    let stop_reason = result.report.stop_reason;
    io::write_model(
        &out_dir.join("model.json"),
        &io::ModelFile::new(
            &result.model,
            config.loss,
            Some("noise.json".into()),
            summary,
            io::config_hash(hash_input.as_bytes()),
        ),
    )?;
    println!(
        "stopped after {} iterations ({:?}): loss {:.6e} -> {:.6e}, grad sup {:.3e}",
        result.report.iterations,
        stop_reason,
        result.report.initial_value,
        result.report.final_value,
        result.report.final_grad_sup
    );
    println!("wrote model.json, noise.json, trace.csv to {}", out_dir.display());
    Ok(match stop_reason {
        StopReason::GradTol | StopReason::FTol => ExitCode::SUCCESS,
        StopReason::MaxIters | StopReason::LineSearchFailure => {
            ExitCode::from(EXIT_PARTIAL_CONVERGENCE)
        }
    })
}

#[derive(Deserialize)]
struct SystemFileConfig {
    system: AnalyticSystem,
}

/// Dataset JSON or bare trajectory CSV (observations only, no truth).
fn load_eval_data(path: &Path) -> Result<(NoisyDataset, Option<AnalyticSystem>)> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        let traj = io::read_trajectory_csv(path)?;
        let data = NoisyDataset::from_observations(traj.times, traj.states)?;
        return Ok((data, None));
    }
    let file = io::read_dataset(path)?;
    let system = file
        .provenance
        .as_ref()
        .and_then(|p| p.get("system"))
        .filter(|v| !v.is_null())
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    Ok((file.to_dataset()?, system))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let model_file = io::read_model(&args.model)?;
    let model = model_file.to_flow_model()?;
    let (dataset, provenance_system) = load_eval_data(&args.data)?;
    if dataset.dim() != model.dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset is {}-dimensional, model expects {}",
            dataset.dim(),
            model.dim()
        )));
    }
    let system = match &args.config {
        Some(path) => Some(load_toml::<SystemFileConfig>(path)?.system),
        None => provenance_system,
    };
    let noises = match &model_file.noise_file {
        Some(name) => {
            let path = args.model.parent().unwrap_or(Path::new(".")).join(name);
            let file: io::NoiseFile = io::read_json(&path)?;
            file.to_estimates()?
        }
        None => Vec::new(),
    };
    let learned = noises.get(args.noise_index);

    let mut metrics = io::Metrics::new();
    let e_n = match (learned, &dataset.true_noise) {
        (Some(est), Some(truth)) => Some(noise_error(est, truth.view())?),
        _ => None,
    };
    let e_f = match (&system, &dataset.truth) {
        (Some(sys), Some(truth)) => Some(vector_field_error(
            &model,
            |x: ndarray::ArrayView1<'_, f64>| sys.eval(x),
            truth.states.view(),
        )?),
        _ => None,
    };
    let e_orbit = dataset
        .truth
        .as_ref()
        .map(|truth| forward_orbit_error(&model, truth));
    metrics.insert("E_N".into(), io::metric_value(e_n));
    metrics.insert("E_f".into(), io::metric_value(e_f));
    metrics.insert("E_F".into(), io::metric_value(e_orbit));
    if let Some(est) = learned {
        for (i, row) in est.values.rows().into_iter().enumerate() {
            if let Ok(moments) = noise_moments(row.iter().copied()) {
                if i == 0 {
                    io::insert_moments(&mut metrics, "moments", moments);
                }
                io::insert_moments(&mut metrics, &format!("moments.x{}", i + 1), moments);
            }
        }
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from("metrics.json"));
    io::write_metrics(&out, &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(args: PredictArgs) -> Result<ExitCode> {
    let model = io::read_model(&args.model)?.to_flow_model()?;
    if args.x0.len() != model.dim() {
        return Err(Error::ShapeMismatch(format!(
            "x0 has {} entries, model expects {}",
            args.x0.len(),
            model.dim()
        )));
    }
    if args.samples == 0 {
        return Err(Error::InvalidInput("samples must be >= 1".into()));
    }
    let times = if args.samples == 1 {
        Array1::from_vec(vec![args.t0])
    } else {
        let t1 = args.t1.ok_or_else(|| {
            Error::InvalidInput("--t1 is required for more than one sample".into())
        })?;
        if !(t1 > args.t0) {
            return Err(Error::InvalidInput(format!(
                "time range [{}, {t1}] is empty",
                args.t0
            )));
        }
        Array1::linspace(args.t0, t1, args.samples)
    };
    let x0 = Array1::from_vec(args.x0);
    let traj = model.predict_orbit(x0.view(), times.view())?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("prediction.csv"));
    io::write_trajectory_csv(&out, &traj)?;
    println!("wrote {} predicted samples to {}", traj.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_fixed_coords(fix: &[String], dim: usize) -> Result<Vec<(usize, f64)>> {
    fix.iter()
        .map(|entry| {
            let (axis, value) = entry.split_once('=').ok_or_else(|| {
                Error::InvalidInput(format!("--fix entry `{entry}` is not `x<i>=<value>`"))
            })?;
            let axis: usize = axis
                .trim()
                .strip_prefix('x')
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    Error::InvalidInput(format!("--fix entry `{entry}` needs an axis like x3"))
                })?;
            if axis == 0 || axis > dim {
                return Err(Error::InvalidInput(format!(
                    "--fix axis x{axis} outside dimension {dim}"
                )));
            }
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("--fix value in `{entry}` is not a number"))
            })?;
            Ok((axis - 1, value))
        })
        .collect()
}

fn cmd_export_field(args: ExportFieldArgs) -> Result<ExitCode> {
    let model = match &args.model {
        Some(path) => Some(io::read_model(path)?.to_flow_model()?),
        None => None,
    };
    let system = match &args.config {
        Some(path) => Some(load_toml::<SystemFileConfig>(path)?.system),
        None => None,
    };
    let dim = match (&model, &system) {
        (Some(m), Some(s)) if m.dim() != s.dim() => {
            return Err(Error::ShapeMismatch(format!(
                "model is {}-dimensional, system {} is {}-dimensional",
                m.dim(),
                s.name(),
                s.dim()
            )))
        }
        (Some(m), _) => m.dim(),
        (None, Some(s)) => s.dim(),
        (None, None) => {
            return Err(Error::InvalidInput(
                "need --model and/or --config to have a field to export".into(),
            ))
        }
    };
    for (name, len) in [
        ("--axes", args.axes.len()),
        ("--min", args.min.len()),
        ("--max", args.max.len()),
        ("--res", args.res.len()),
    ] {
        if len != 2 {
            return Err(Error::InvalidInput(format!(
                "{name} needs exactly two comma-separated values, got {len}"
            )));
        }
    }
    let (ai, aj) = (args.axes[0], args.axes[1]);
    if ai == 0 || aj == 0 || ai > dim || aj > dim || ai == aj {
        return Err(Error::InvalidInput(format!(
            "grid axes x{ai},x{aj} invalid for dimension {dim}"
        )));
    }
    let (ai, aj) = (ai - 1, aj - 1);
    if args.res.iter().any(|&r| r < 2) {
        return Err(Error::InvalidInput("grid resolution must be >= 2".into()));
    }
    if args
        .min
        .iter()
        .chain(args.max.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidInput("grid bounds must be finite".into()));
    }
    let mut base = Array1::zeros(dim);
    for (axis, value) in parse_fixed_coords(&args.fix, dim)? {
        base[axis] = value;
    }

    let mut out = String::new();
    for i in 1..=dim {
        let _ = write!(out, "{}x{i}", if i == 1 { "" } else { "," });
    }
    if model.is_some() {
        for i in 1..=dim {
            let _ = write!(out, ",fhat{i}");
        }
    }
    if system.is_some() {
        for i in 1..=dim {
            let _ = write!(out, ",f{i}");
        }
    }
    out.push('\n');

    let grid_i = Array1::linspace(args.min[0], args.max[0], args.res[0]);
    let grid_j = Array1::linspace(args.min[1], args.max[1], args.res[1]);
    // Batch the learned-field evaluation over the whole grid at once.
    let mut points = Array2::zeros((dim, args.res[0] * args.res[1]));
    for (k, (gi, gj)) in grid_i
        .iter()
        .flat_map(|gi| grid_j.iter().map(move |gj| (*gi, *gj)))
        .enumerate()
    {
        let mut col = base.clone();
        col[ai] = gi;
        col[aj] = gj;
        points.column_mut(k).assign(&col);
    }
    let fhat = model
        .as_ref()
        .map(|m| rkfit::network::mlp_forward_batch(&m.params, points.view()).0);
    for k in 0..points.ncols() {
        for i in 0..dim {
            let _ = write!(out, "{}{}", if i == 0 { "" } else { "," }, points[[i, k]]);
        }
        if let Some(fhat) = &fhat {
            for i in 0..dim {
                let _ = write!(out, ",{}", fhat[[i, k]]);
            }
        }
        if let Some(system) = &system {
            let f = system.eval(points.column(k));
            for v in f.iter() {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    let path = args.out.unwrap_or_else(|| PathBuf::from("field.csv"));
    std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
    println!(
        "wrote {} grid rows to {}",
        args.res[0] * args.res[1],
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_run_experiment(args: RunExperimentArgs) -> Result<ExitCode> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    let out_dir = match (&args.out, &config.out_dir) {
        (Some(out), _) => out.clone(),
        (None, Some(out)) => out.clone(),
        (None, None) => {
            return Err(Error::InvalidInput(
                "no output directory: set `out_dir` in the config or pass --out".into(),
            ))
        }
    };
    let outcome = run_experiment(&config, &out_dir)?;
    let failures: usize = outcome.levels.iter().map(|l| l.failures).sum();
    for level in &outcome.levels {
        println!(
            "{:>6}% noise: E_N mean {}, E_f mean {}, E_F median {} ({} trials, {} failed)",
            level.percent,
            level
                .e_n_mean
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "-".into()),
            level
                .e_f_mean
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "-".into()),
            level
                .e_orbit_median
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "-".into()),
            level.trials,
            level.failures
        );
    }
    println!(
        "artifacts in {} ({} trials, {failures} failed)",
        outcome.out_dir.display(),
        outcome.trials.len()
    );
    Ok(ExitCode::SUCCESS)
}
