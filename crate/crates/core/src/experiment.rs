//! Config-driven sweeps: simulate → corrupt → train → evaluate across noise
//! levels and trials, writing every artifact plus per-trial and summary
//! tables. All randomness is derived from seeds in the config, so a rerun
//! reproduces every output byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corrupt::{
    add_gaussian_noise, add_student_t_noise, NoisyDataset, DEFAULT_SMOOTHING_WINDOW,
};
use crate::error::{Error, Result};
use crate::integrate::{
    implicit_midpoint_simulate, rk4_simulate, sample_exponential_times, Trajectory,
    DEFAULT_FP_MAX_ITER, DEFAULT_FP_TOL,
};
use crate::io;
use crate::loss::LossConfig;
use crate::metrics::{forward_orbit_error, median_over_trials, noise_error, noise_moments, vector_field_error};
use crate::optimize::{OptimizerOptions, StopReason};
use crate::stepper::RkTableau;
use crate::systems::AnalyticSystem;
use crate::train::{train, TrainResult, TrainSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableauId {
    Rk4,
    Rk3,
}

impl TableauId {
    pub fn tableau(self) -> RkTableau {
        match self {
            TableauId::Rk4 => RkTableau::rk4_classical(),
            TableauId::Rk3 => RkTableau::rk3_kutta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    Fixed,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    StudentT,
}

fn default_t0() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub x0: Vec<f64>,
    #[serde(default = "default_t0")]
    pub t0: f64,
    pub t1: f64,
    pub samples: usize,
    #[serde(default = "default_spacing")]
    pub spacing: Spacing,
    /// Gap-sampling seed; only consulted for exponential spacing.
    #[serde(default)]
    pub seed: u64,
}

fn default_spacing() -> Spacing {
    Spacing::Fixed
}

fn default_distribution() -> NoiseKind {
    NoiseKind::Gaussian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptSpec {
    #[serde(default = "default_distribution")]
    pub distribution: NoiseKind,
    /// Noise amplitudes, percent of per-coordinate sample deviation; one
    /// sweep level per entry.
    pub percents: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<u32>,
}

fn default_tableau() -> TableauId {
    TableauId::Rk4
}

fn default_smoothing() -> usize {
    DEFAULT_SMOOTHING_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    #[serde(default = "default_tableau")]
    pub tableau: TableauId,
    #[serde(default = "default_smoothing")]
    pub smoothing_window: usize,
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Output directory; a CLI-level `--out` may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Root of the per-level/per-trial seed derivation.
    #[serde(default)]
    pub base_seed: u64,
    /// Analytic benchmark to simulate; mutually exclusive with `input`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<AnalyticSystem>,
    /// Trajectory CSV ingested as ground truth instead of simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSpec>,
    pub corrupt: CorruptSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.system, &self.input) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput(
                    "config has both `system` and `input`; pick one data source".into(),
                ))
            }
            (None, None) => {
                return Err(Error::InvalidInput(
                    "config needs a `system` to simulate or an `input` file".into(),
                ))
            }
            (Some(_), None) if self.simulate.is_none() => {
                return Err(Error::InvalidInput(
                    "a `[simulate]` section is required with `system`".into(),
                ))
            }
            _ => {}
        }
        if let Some(sim) = &self.simulate {
            if sim.samples < 2 {
                return Err(Error::InvalidInput("simulate.samples must be >= 2".into()));
            }
            if !(sim.t1 > sim.t0) {
                return Err(Error::InvalidInput(format!(
                    "simulate time range [{}, {}] is empty",
                    sim.t0, sim.t1
                )));
            }
            if let Some(system) = &self.system {
                if sim.x0.len() != system.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "x0 has {} entries but {} is {}-dimensional",
                        sim.x0.len(),
                        system.name(),
                        system.dim()
                    )));
                }
            }
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("trials must be >= 1".into()));
        }
        if self.corrupt.percents.is_empty() {
            return Err(Error::InvalidInput("corrupt.percents is empty".into()));
        }
        if let Some(&p) = self.corrupt.percents.iter().find(|p| !(**p >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "noise percent must be >= 0, got {p}"
            )));
        }
        if self.corrupt.distribution == NoiseKind::StudentT && self.corrupt.dof.is_none() {
            return Err(Error::InvalidInput(
                "student-t noise requires `corrupt.dof`".into(),
            ));
        }
        if let Some(system) = &self.system {
            let n = system.dim();
            if self.model.widths.first() != Some(&n) || self.model.widths.last() != Some(&n) {
                return Err(Error::ShapeMismatch(format!(
                    "widths {:?} incompatible with {}-dimensional {}",
                    self.model.widths,
                    n,
                    system.name()
                )));
            }
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }
}

/// Per-level/per-trial seed streams, spaced so levels, trials, and purposes
/// never collide for any sane sweep size.
fn derive_seed(base: u64, level: usize, trial: usize, stream: u64) -> u64 {
    base.wrapping_add(10_000u64.wrapping_mul(level as u64))
        .wrapping_add(100u64.wrapping_mul(trial as u64))
        .wrapping_add(stream)
}

/// Simulate the configured system at the requested sample times. The double
/// pendulum goes through the symplectic integrator; the dissipative/chaotic
/// benchmarks use RK4.
pub fn simulate_system(system: &AnalyticSystem, sim: &SimulateSpec) -> Result<Trajectory> {
    let times = match sim.spacing {
        Spacing::Fixed => Array1::linspace(sim.t0, sim.t1, sim.samples),
        Spacing::Exponential => {
            let mean_dt = (sim.t1 - sim.t0) / (sim.samples - 1) as f64;
            sample_exponential_times(mean_dt, sim.t0, sim.samples, sim.seed)?
        }
    };
    let x0 = Array1::from_vec(sim.x0.clone());
    let field = |x: ndarray::ArrayView1<'_, f64>| system.eval(x);
    match system {
        AnalyticSystem::DoublePendulum(_) => implicit_midpoint_simulate(
            field,
            x0.view(),
            times.view(),
            DEFAULT_FP_TOL,
            DEFAULT_FP_MAX_ITER,
        ),
        _ => rk4_simulate(field, x0.view(), times.view()),
    }
}

fn corrupt_trajectory(
    truth: &Trajectory,
    spec: &CorruptSpec,
    percent: f64,
    seed: u64,
) -> Result<NoisyDataset> {
    match spec.distribution {
        NoiseKind::Gaussian => add_gaussian_noise(truth, percent, seed),
        NoiseKind::StudentT => add_student_t_noise(
            truth,
            percent,
            spec.dof.expect("validated: student-t has dof"),
            seed,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub percent: f64,
    pub level: usize,
    pub trial: usize,
    pub corrupt_seed: u64,
    pub init_seed: u64,
    /// Failure message when the trial did not produce a model.
    pub error: Option<String>,
    pub e_n: Option<f64>,
    pub e_f: Option<f64>,
    /// Forward-orbit error E_F; may be infinite for divergent orbits.
    pub e_orbit: Option<f64>,
    pub stop_reason: Option<StopReason>,
    pub final_loss: Option<f64>,
    pub iterations: usize,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub percent: f64,
    pub trials: usize,
    pub failures: usize,
    pub e_n_mean: Option<f64>,
    pub e_n_std: Option<f64>,
    pub e_f_mean: Option<f64>,
    pub e_f_std: Option<f64>,
    pub e_orbit_median: Option<f64>,
    /// Non-finite orbit errors excluded from the median.
    pub e_orbit_ignored: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub trials: Vec<TrialRecord>,
    pub levels: Vec<LevelSummary>,
    pub out_dir: PathBuf,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

fn evaluate_trial(
    result: &TrainResult,
    dataset: &NoisyDataset,
    system: Option<&AnalyticSystem>,
) -> (Option<f64>, Option<f64>, Option<f64>, io::Metrics) {
    let mut metrics = io::Metrics::new();
    let e_n = match (&result.noises[0], &dataset.true_noise) {
        (est, Some(truth)) => noise_error(est, truth.view()).ok(),
        _ => None,
    };
    let e_f = match (system, &dataset.truth) {
        (Some(sys), Some(truth)) => vector_field_error(
            &result.model,
            |x: ndarray::ArrayView1<'_, f64>| sys.eval(x),
            truth.states.view(),
        )
        .ok(),
        _ => None,
    };
    let e_orbit = dataset
        .truth
        .as_ref()
        .map(|truth| forward_orbit_error(&result.model, truth));
    metrics.insert("E_N".into(), io::metric_value(e_n));
    metrics.insert("E_f".into(), io::metric_value(e_f));
    metrics.insert("E_F".into(), io::metric_value(e_orbit));
    let learned = &result.noises[0].values;
    for (i, row) in learned.rows().into_iter().enumerate() {
        if let Ok(moments) = noise_moments(row.iter().copied()) {
            if i == 0 {
                io::insert_moments(&mut metrics, "moments", moments);
            }
            io::insert_moments(&mut metrics, &format!("moments.x{}", i + 1), moments);
        }
    }
    (e_n, e_f, e_orbit, metrics)
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_trial_table(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut out = String::from(
        "percent,trial,corrupt_seed,init_seed,status,E_N,E_f,E_F,stop_reason,final_loss,iterations\n",
    );
    for r in records {
        let status = match &r.error {
            None => "ok".to_string(),
            Some(msg) => format!("failed: {}", msg.replace([',', '\n'], ";")),
        };
        let stop = r
            .stop_reason
            .map(|s| format!("{s:?}").to_lowercase())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.percent,
            r.trial,
            r.corrupt_seed,
            r.init_seed,
            status,
            opt_field(r.e_n),
            opt_field(r.e_f),
            opt_field(r.e_orbit),
            stop,
            opt_field(r.final_loss),
            r.iterations
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_summary_table(path: &Path, levels: &[LevelSummary]) -> Result<()> {
    let mut out = String::from(
        "percent,trials,failures,E_N_mean,E_N_std,E_f_mean,E_f_std,E_F_median,E_F_ignored\n",
    );
    for l in levels {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            l.percent,
            l.trials,
            l.failures,
            opt_field(l.e_n_mean),
            opt_field(l.e_n_std),
            opt_field(l.e_f_mean),
            opt_field(l.e_f_std),
            opt_field(l.e_orbit_median),
            l.e_orbit_ignored
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn record_to_json(r: &TrialRecord) -> Value {
    let mut map = serde_json::Map::new();
    map.insert("percent".into(), serde_json::json!(r.percent));
    map.insert("trial".into(), serde_json::json!(r.trial));
    map.insert("corrupt_seed".into(), serde_json::json!(r.corrupt_seed));
    map.insert("init_seed".into(), serde_json::json!(r.init_seed));
    map.insert(
        "status".into(),
        match &r.error {
            None => Value::String("ok".into()),
            Some(msg) => Value::String(format!("failed: {msg}")),
        },
    );
    map.insert("E_N".into(), io::metric_value(r.e_n));
    map.insert("E_f".into(), io::metric_value(r.e_f));
    map.insert("E_F".into(), io::metric_value(r.e_orbit));
    map.insert("final_loss".into(), io::metric_value(r.final_loss));
    map.insert("iterations".into(), serde_json::json!(r.iterations));
    Value::Object(map)
}

fn level_to_json(l: &LevelSummary) -> Value {
    let mut map = serde_json::Map::new();
    map.insert("percent".into(), serde_json::json!(l.percent));
    map.insert("trials".into(), serde_json::json!(l.trials));
    map.insert("failures".into(), serde_json::json!(l.failures));
    map.insert("E_N_mean".into(), io::metric_value(l.e_n_mean));
    map.insert("E_N_std".into(), io::metric_value(l.e_n_std));
    map.insert("E_f_mean".into(), io::metric_value(l.e_f_mean));
    map.insert("E_f_std".into(), io::metric_value(l.e_f_std));
    map.insert("E_F_median".into(), io::metric_value(l.e_orbit_median));
    map.insert("E_F_ignored".into(), serde_json::json!(l.e_orbit_ignored));
    Value::Object(map)
}

/// Run the full sweep, writing artifacts under `out_dir`:
/// `truth.csv`, `p{percent}/t{trial}/{dataset,model,noise,metrics}.json`,
/// `p{percent}/t{trial}/trace.csv`, `trials.csv`, `summary.csv`,
/// `summary.json`. Trial failures are recorded and the sweep continues.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    config.validate()?;
    let truth = match (&config.system, &config.input) {
        (Some(system), None) => {
            simulate_system(system, config.simulate.as_ref().expect("validated"))?
        }
        (None, Some(path)) => io::read_trajectory_csv(path)?,
        _ => unreachable!("validated"),
    };
    let n = truth.dim();
    if config.model.widths.first() != Some(&n) || config.model.widths.last() != Some(&n) {
        return Err(Error::ShapeMismatch(format!(
            "widths {:?} incompatible with {n}-dimensional data",
            config.model.widths
        )));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    io::write_trajectory_csv(&out_dir.join("truth.csv"), &truth)?;

    let mut records = Vec::new();
    for (level, &percent) in config.corrupt.percents.iter().enumerate() {
        for trial in 0..config.trials {
            let corrupt_seed = derive_seed(config.base_seed, level, trial, 1);
            let init_seed = derive_seed(config.base_seed, level, trial, 2);
            let dir = out_dir.join(format!("p{percent}")).join(format!("t{trial}"));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

            let dataset = corrupt_trajectory(&truth, &config.corrupt, percent, corrupt_seed)?;
            let provenance = serde_json::json!({
                "system": config.system,
                "input": config.input,
                "simulate": config.simulate,
                "distribution": config.corrupt.distribution,
                "percent": percent,
                "dof": config.corrupt.dof,
                "corrupt_seed": corrupt_seed,
                "trial": trial,
            });
            io::write_dataset(
                &dir.join("dataset.json"),
                &io::DatasetFile::from_dataset(&dataset, Some(provenance)),
            )?;

            let spec = TrainSpec {
                widths: config.model.widths.clone(),
                tableau: config.model.tableau.tableau(),
                loss: config.loss,
                optimizer: config.optimizer,
                init_seed,
                smoothing_window: config.model.smoothing_window,
            };
            log::info!(
                "level {percent}% trial {trial}: training (corrupt seed {corrupt_seed}, init seed {init_seed})"
            );
            let mut record = TrialRecord {
                percent,
                level,
                trial,
                corrupt_seed,
                init_seed,
                error: None,
                e_n: None,
                e_f: None,
                e_orbit: None,
                stop_reason: None,
                final_loss: None,
                iterations: 0,
                dir: dir.clone(),
            };
            match train(std::slice::from_ref(&dataset), &spec) {
                Ok(result) => {
                    let hash_input = serde_json::to_string(&(&spec, percent, trial, corrupt_seed))
                        .expect("spec serializes");
                    io::write_trace_csv(&dir.join("trace.csv"), &result.report.trace)?;
                    io::write_json(
                        &dir.join("noise.json"),
                        &io::NoiseFile::from_estimates(&result.noises),
                    )?;
                    let summary = io::TrainingSummary::from_report(
                        &result.report,
                        Some("trace.csv".into()),
                    );
                    io::write_model(
                        &dir.join("model.json"),
                        &io::ModelFile::new(
                            &result.model,
                            config.loss,
                            Some("noise.json".into()),
                            summary,
                            io::config_hash(hash_input.as_bytes()),
                        ),
                    )?;
                    let (e_n, e_f, e_orbit, metrics) =
                        evaluate_trial(&result, &dataset, config.system.as_ref());
                    io::write_metrics(&dir.join("metrics.json"), &metrics)?;
                    record.e_n = e_n;
                    record.e_f = e_f;
                    record.e_orbit = e_orbit;
                    record.stop_reason = Some(result.report.stop_reason);
                    record.final_loss = Some(result.report.final_value);
                    record.iterations = result.report.iterations;
                }
                Err(err) => {
                    log::warn!("level {percent}% trial {trial} failed: {err}");
                    record.error = Some(err.to_string());
                }
            }
            records.push(record);
        }
    }

    let mut levels = Vec::new();
    for (level, &percent) in config.corrupt.percents.iter().enumerate() {
        let of_level: Vec<&TrialRecord> = records.iter().filter(|r| r.level == level).collect();
        let failures = of_level.iter().filter(|r| r.error.is_some()).count();
        let e_n: Vec<f64> = of_level.iter().filter_map(|r| r.e_n).collect();
        let e_f: Vec<f64> = of_level.iter().filter_map(|r| r.e_f).collect();
        let e_orbit: Vec<f64> = of_level.iter().filter_map(|r| r.e_orbit).collect();
        let (e_n_mean, e_n_std) = mean_std(&e_n);
        let (e_f_mean, e_f_std) = mean_std(&e_f);
        let (e_orbit_median, e_orbit_ignored) = match median_over_trials(&e_orbit) {
            Ok((median, ignored)) => (Some(median), ignored),
            Err(_) => (None, e_orbit.len()),
        };
        levels.push(LevelSummary {
            percent,
            trials: config.trials,
            failures,
            e_n_mean,
            e_n_std,
            e_f_mean,
            e_f_std,
            e_orbit_median,
            e_orbit_ignored,
        });
    }

    write_trial_table(&out_dir.join("trials.csv"), &records)?;
    write_summary_table(&out_dir.join("summary.csv"), &levels)?;
    let summary_json = serde_json::json!({
        "levels": levels.iter().map(level_to_json).collect::<Vec<_>>(),
        "trials": records.iter().map(record_to_json).collect::<Vec<_>>(),
    });
    io::write_json(&out_dir.join("summary.json"), &summary_json)?;

    Ok(ExperimentOutcome {
        trials: records,
        levels,
        out_dir: out_dir.to_path_buf(),
    })
}
