//! On-disk formats: trajectory CSV, dataset/model/noise JSON bundles, the
//! optimizer trace, and the flat metrics object.
//!
//! Writers are deterministic — struct fields serialize in declaration order,
//! free-form objects sort their keys, and floats print in the shortest
//! representation that parses back bit-exactly — so write → read → write
//! reproduces a file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corrupt::NoisyDataset;
use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::loss::{LossConfig, NoiseEstimate};
use crate::network::MlpParams;
use crate::optimize::{OptimizeReport, StopReason, TraceEntry};
use crate::stepper::{FlowModel, RkTableau};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const NOISE_FORMAT_VERSION: u32 = 1;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------------------
// Trajectory CSV

/// Write `t,x1,...,xn` rows. `{}` on f64 prints the shortest decimal that
/// parses back to the same bits, so the file is lossless.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let (n, m) = traj.states.dim();
    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for j in 0..m {
        let _ = write!(out, "{}", traj.times[j]);
        for i in 0..n {
            let _ = write!(out, ",{}", traj.states[[i, j]]);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path_str(path), e))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path_str(path), "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0].trim() != "t" {
        return Err(Error::parse(
            path_str(path),
            format!("expected header `t,x1,...,xn`, got `{header}`"),
        ));
    }
    let n = cols.len() - 1;
    let mut times = Vec::new();
    let mut flat = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 1 {
            return Err(Error::parse(
                path_str(path),
                format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    n + 1,
                    fields.len()
                ),
            ));
        }
        for (k, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(
                    path_str(path),
                    format!("line {}: `{}` is not a number", lineno + 2, field),
                )
            })?;
            if k == 0 {
                times.push(v);
            } else {
                flat.push(v);
            }
        }
    }
    let m = times.len();
    // Column-major arrival (sample by sample); Trajectory stores n × m.
    let mut states = Array2::zeros((n, m));
    for j in 0..m {
        for i in 0..n {
            states[[i, j]] = flat[j * n + i];
        }
    }
    Trajectory::new(Array1::from_vec(times), states)
}

// ---------------------------------------------------------------------------
// JSON plumbing

/// Pretty-printed JSON plus trailing newline; input must already be
/// deterministic (struct or sorted map).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path_str(path), e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path_str(path), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path_str(path), e.to_string()))
}

fn matrix_to_rows(a: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{what}: no rows")));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::ShapeMismatch(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), m), flat)
        .map_err(|e| Error::ShapeMismatch(format!("{what}: {e}")))
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective(format!(
            "{what} contains non-finite values; refusing to write"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset bundle

/// Single-file dataset: observation matrix with optional ground truth and
/// the provenance (generator config, seeds) that produced it. Matrices are
/// stored one coordinate per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format_version: u32,
    pub times: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Value>,
}

impl DatasetFile {
    pub fn from_dataset(data: &NoisyDataset, provenance: Option<Value>) -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            times: data.times.to_vec(),
            observations: matrix_to_rows(data.observations.view()),
            truth: data.truth.as_ref().map(|t| matrix_to_rows(t.states.view())),
            noise: data.true_noise.as_ref().map(|n| matrix_to_rows(n.view())),
            provenance,
        }
    }

    /// Rebuild the in-memory dataset, re-running the Y = X + N validator.
    pub fn to_dataset(&self) -> Result<NoisyDataset> {
        let times = Array1::from_vec(self.times.clone());
        let observations = rows_to_matrix(&self.observations, "observations")?;
        let truth = match &self.truth {
            Some(rows) => Some(Trajectory::new(
                times.clone(),
                rows_to_matrix(rows, "truth")?,
            )?),
            None => None,
        };
        let noise = match &self.noise {
            Some(rows) => Some(rows_to_matrix(rows, "noise")?),
            None => None,
        };
        let data = NoisyDataset {
            times,
            observations,
            truth,
            true_noise: noise,
        };
        data.validate()?;
        Ok(data)
    }
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<()> {
    check_finite(file.times.iter(), "dataset times")?;
    check_finite(file.observations.iter().flatten(), "dataset observations")?;
    write_json(path, file)
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Learned noise

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFile {
    pub format_version: u32,
    /// One matrix per training dataset, coordinate rows × samples.
    pub noises: Vec<Vec<Vec<f64>>>,
}

impl NoiseFile {
    pub fn from_estimates(noises: &[NoiseEstimate]) -> Self {
        Self {
            format_version: NOISE_FORMAT_VERSION,
            noises: noises
                .iter()
                .map(|n| matrix_to_rows(n.values.view()))
                .collect(),
        }
    }

    pub fn to_estimates(&self) -> Result<Vec<NoiseEstimate>> {
        self.noises
            .iter()
            .map(|rows| {
                Ok(NoiseEstimate {
                    values: rows_to_matrix(rows, "noise estimate")?,
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Model file

/// Termination record kept inside the model file; the per-iteration trace
/// lives in its own CSV, referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub f_evals: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub final_grad_sup: f64,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
}

impl TrainingSummary {
    pub fn from_report(report: &OptimizeReport, trace_file: Option<String>) -> Self {
        Self {
            iterations: report.iterations,
            f_evals: report.f_evals,
            initial_value: report.initial_value,
            final_value: report.final_value,
            final_grad_sup: report.final_grad_sup,
            stop_reason: report.stop_reason,
            trace_file,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub widths: Vec<usize>,
    /// Layer-major flat parameters: per layer, W row-major then bias.
    pub params: Vec<f64>,
    pub tableau_a: Vec<Vec<f64>>,
    pub tableau_b: Vec<f64>,
    pub loss: LossConfig,
    /// Sibling file holding the learned per-dataset noise matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_file: Option<String>,
    pub report: TrainingSummary,
    /// SHA-256 of the training configuration that produced this model.
    pub config_hash: String,
}

impl ModelFile {
    pub fn new(
        model: &FlowModel,
        loss: LossConfig,
        noise_file: Option<String>,
        report: TrainingSummary,
        config_hash: String,
    ) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            widths: model.params.widths(),
            params: model.params.flatten().to_vec(),
            tableau_a: matrix_to_rows(model.tableau.a.view()),
            tableau_b: model.tableau.b.to_vec(),
            loss,
            noise_file,
            report,
            config_hash,
        }
    }

    pub fn to_flow_model(&self) -> Result<FlowModel> {
        let params = MlpParams::from_flat(&self.widths, Array1::from_vec(self.params.clone()).view())?;
        let tableau = RkTableau {
            a: rows_to_matrix(&self.tableau_a, "tableau a")?,
            b: Array1::from_vec(self.tableau_b.clone()),
        };
        FlowModel::new(params, tableau)
    }
}

pub fn write_model(path: &Path, file: &ModelFile) -> Result<()> {
    check_finite(file.params.iter(), "model parameters")?;
    write_json(path, file)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Optimizer trace CSV

pub fn write_trace_csv(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut out = String::from("iter,f,grad_sup,alpha,dir_deriv0,dir_deriv_alpha,f_evals\n");
    for e in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.iter, e.f, e.grad_sup, e.alpha, e.dir_deriv0, e.dir_deriv_alpha, e.f_evals
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path_str(path), e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path_str(path), "empty trace"))?;
    if header != "iter,f,grad_sup,alpha,dir_deriv0,dir_deriv_alpha,f_evals" {
        return Err(Error::parse(
            path_str(path),
            format!("unexpected trace header `{header}`"),
        ));
    }
    let mut entries = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                path_str(path),
                format!("line {}: expected 7 fields", lineno + 2),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| {
                Error::parse(
                    path_str(path),
                    format!("line {}: `{s}` is not a number", lineno + 2),
                )
            })
        };
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::parse(
                    path_str(path),
                    format!("line {}: `{s}` is not an integer", lineno + 2),
                )
            })
        };
        entries.push(TraceEntry {
            iter: int(fields[0])?,
            f: num(fields[1])?,
            grad_sup: num(fields[2])?,
            alpha: num(fields[3])?,
            dir_deriv0: num(fields[4])?,
            dir_deriv_alpha: num(fields[5])?,
            f_evals: int(fields[6])?,
        });
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Metrics object

/// SHA-256 hex digest used to stamp models with their generating config.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Flat metrics map: insertion interface for the evaluate/experiment paths.
pub type Metrics = BTreeMap<String, Value>;

/// Missing → null (explicitly present); non-finite → the strings
/// "inf"/"-inf"/"nan", since JSON numbers cannot carry them.
pub fn metric_value(v: Option<f64>) -> Value {
    match v {
        None => Value::Null,
        Some(x) if x.is_nan() => Value::String("nan".into()),
        Some(x) if x == f64::INFINITY => Value::String("inf".into()),
        Some(x) if x == f64::NEG_INFINITY => Value::String("-inf".into()),
        Some(x) => serde_json::json!(x),
    }
}

/// Insert `{prefix}.mu/var/skew/kurt` from a `(mu, var, skew, kurt)` tuple.
pub fn insert_moments(metrics: &mut Metrics, prefix: &str, m: (f64, f64, f64, f64)) {
    metrics.insert(format!("{prefix}.mu"), metric_value(Some(m.0)));
    metrics.insert(format!("{prefix}.var"), metric_value(Some(m.1)));
    metrics.insert(format!("{prefix}.skew"), metric_value(Some(m.2)));
    metrics.insert(format!("{prefix}.kurt"), metric_value(Some(m.3)));
}

pub fn write_metrics(path: &Path, metrics: &Metrics) -> Result<()> {
    write_json(path, metrics)
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    read_json(path)
}
