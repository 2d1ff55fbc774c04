//! End-to-end training: assemble the joint unknown [θ; N̂₁…N̂_k], warm-start
//! the noise estimates by smoothing, initialize the network with Xavier
//! draws, and hand the whole thing to the quasi-Newton solver.

use serde::{Deserialize, Serialize};

use crate::corrupt::{NoisyDataset, DEFAULT_SMOOTHING_WINDOW};
use crate::error::{Error, Result};
use crate::loss::{loss_gradient, pack_joint, unpack_joint, LossConfig, NoiseEstimate};
use crate::network::MlpParams;
use crate::optimize::{lbfgs_minimize, OptimizeReport, OptimizerOptions};
use crate::stepper::{FlowModel, RkTableau};

fn default_smoothing_window() -> usize {
    DEFAULT_SMOOTHING_WINDOW
}

/// Everything that defines one training run apart from the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    /// Full layer widths; first and last must equal the state dimension.
    pub widths: Vec<usize>,
    pub tableau: RkTableau,
    pub loss: LossConfig,
    pub optimizer: OptimizerOptions,
    /// Seed of the Xavier parameter draw.
    pub init_seed: u64,
    /// Moving-average window of the noise warm start (odd; 1 starts at 0).
    #[serde(default = "default_smoothing_window")]
    pub smoothing_window: usize,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: FlowModel,
    pub noises: Vec<NoiseEstimate>,
    pub report: OptimizeReport,
}

/// Fit shared dynamics and per-dataset noise estimates to one or more
/// observation sets.
pub fn train(datasets: &[NoisyDataset], spec: &TrainSpec) -> Result<TrainResult> {
    if datasets.is_empty() {
        return Err(Error::InvalidInput("no datasets to train on".into()));
    }
    spec.loss.validate()?;
    spec.optimizer.validate()?;
    spec.tableau.validate()?;
    let n = datasets[0].dim();
    for (k, data) in datasets.iter().enumerate() {
        data.validate()?;
        if data.dim() != n {
            return Err(Error::ShapeMismatch(format!(
                "dataset {k} has dimension {}, expected {n}",
                data.dim()
            )));
        }
        if data.len() <= 2 * spec.loss.q {
            return Err(Error::InvalidInput(format!(
                "dataset {k} has {} samples, need more than {}",
                data.len(),
                2 * spec.loss.q
            )));
        }
    }
    if spec.widths.first() != Some(&n) || spec.widths.last() != Some(&n) {
        return Err(Error::ShapeMismatch(format!(
            "widths {:?} must start and end at the state dimension {n}",
            spec.widths
        )));
    }

    let params0 = MlpParams::xavier(&spec.widths, spec.init_seed)?;
    let noises0: Vec<NoiseEstimate> = datasets
        .iter()
        .map(|d| NoiseEstimate::from_smoothing(d.observations.view(), spec.smoothing_window))
        .collect::<Result<_>>()?;

    let shapes: Vec<(usize, usize)> = datasets.iter().map(|d| d.observations.dim()).collect();
    let widths = spec.widths.clone();
    let tableau = spec.tableau.clone();
    let loss_cfg = spec.loss;
    let x0 = pack_joint(&params0, &noises0);
    let objective = move |v: ndarray::ArrayView1<'_, f64>| {
        let (params, noises) = unpack_joint(&widths, &shapes, v)?;
        loss_gradient(&params, &tableau, datasets, &noises, &loss_cfg)
    };
    let (xbest, report) = lbfgs_minimize(objective, x0, &spec.optimizer)?;

    let shapes: Vec<(usize, usize)> = datasets.iter().map(|d| d.observations.dim()).collect();
    let (params, noises) = unpack_joint(&spec.widths, &shapes, xbest.view())?;
    Ok(TrainResult {
        model: FlowModel::new(params, spec.tableau.clone())?,
        noises,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrupt::add_gaussian_noise;
    use crate::integrate::rk4_simulate;
    use crate::metrics::vector_field_error;
    use ndarray::{array, Array1, ArrayView1};

    fn decay_dataset(m: usize, percent: f64, seed: u64) -> NoisyDataset {
        // Scalar linear decay x' = -x sampled on [0, 4].
        let times = Array1::linspace(0.0, 4.0, m);
        let traj = rk4_simulate(|x| array![-x[0]], array![1.5].view(), times.view()).unwrap();
        add_gaussian_noise(&traj, percent, seed).unwrap()
    }

    fn small_spec(widths: Vec<usize>, gamma: f64, max_iters: usize, seed: u64) -> TrainSpec {
        TrainSpec {
            widths,
            tableau: RkTableau::rk4_classical(),
            loss: LossConfig {
                q: 2,
                rho: 1.5,
                omega0: 1.0,
                gamma,
                beta: 1e-8,
            },
            optimizer: OptimizerOptions {
                max_iters,
                ..OptimizerOptions::default()
            },
            init_seed: seed,
            smoothing_window: 5,
        }
    }

    #[test]
    fn learns_a_scalar_linear_field_from_clean_data() {
        let data = decay_dataset(60, 0.0, 1);
        let truth = data.truth.clone().unwrap();
        let spec = small_spec(vec![1, 6, 1], 0.05, 400, 7);
        let result = train(std::slice::from_ref(&data), &spec).unwrap();
        let ef = vector_field_error(
            &result.model,
            |x: ArrayView1<'_, f64>| array![-x[0]],
            truth.states.view(),
        )
        .unwrap();
        assert!(ef < 1e-3, "vector-field error {ef}");
        assert!(result.report.final_value < result.report.initial_value);
    }

    #[test]
    fn stronger_gamma_shrinks_the_learned_noise() {
        let data = decay_dataset(40, 10.0, 3);
        let mut norms = Vec::new();
        for gamma in [0.1, 1.0, 10.0] {
            let spec = small_spec(vec![1, 4, 1], gamma, 150, 11);
            let result = train(std::slice::from_ref(&data), &spec).unwrap();
            norms.push(result.noises[0].frobenius_sq().sqrt());
        }
        assert!(
            norms[0] > norms[1] && norms[1] > norms[2],
            "noise norms not decreasing in gamma: {norms:?}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let data = decay_dataset(30, 5.0, 5);
        let spec = small_spec(vec![1, 4, 1], 0.1, 60, 13);
        let a = train(std::slice::from_ref(&data), &spec).unwrap();
        let b = train(std::slice::from_ref(&data), &spec).unwrap();
        assert_eq!(a.model.params.flatten(), b.model.params.flatten());
        assert_eq!(a.noises[0].values, b.noises[0].values);
        assert_eq!(a.report.iterations, b.report.iterations);
        assert_eq!(a.report.f_evals, b.report.f_evals);
        assert_eq!(a.report.final_value.to_bits(), b.report.final_value.to_bits());
    }

    #[test]
    fn validation_catches_bad_shapes() {
        let data = decay_dataset(30, 0.0, 1);
        let mut spec = small_spec(vec![2, 4, 2], 0.1, 10, 1);
        assert!(train(std::slice::from_ref(&data), &spec).is_err());
        spec.widths = vec![1, 4, 1];
        spec.loss.q = 15;
        assert!(train(std::slice::from_ref(&data), &spec).is_err());
        assert!(train(&[], &spec).is_err());
    }

    #[test]
    fn shared_theta_fits_two_trajectories() {
        let a = decay_dataset(40, 2.0, 21);
        let b = decay_dataset(35, 2.0, 22);
        let spec = small_spec(vec![1, 6, 1], 0.05, 250, 3);
        let result = train(&[a.clone(), b.clone()], &spec).unwrap();
        assert_eq!(result.noises.len(), 2);
        assert_eq!(result.noises[0].values.dim(), (1, 40));
        assert_eq!(result.noises[1].values.dim(), (1, 35));
        let truth = a.truth.unwrap();
        let ef = vector_field_error(
            &result.model,
            |x: ArrayView1<'_, f64>| array![-x[0]],
            truth.states.view(),
        )
        .unwrap();
        assert!(ef < 5e-2, "vector-field error {ef}");
    }
}
