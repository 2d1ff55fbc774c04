//! Evaluation metrics: vector-field error, noise-estimate error, forward
//! orbit error, sample moments, and trial aggregation.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::loss::NoiseEstimate;
use crate::network::mlp_forward_batch;
use crate::stepper::FlowModel;

/// Relative squared L2 error between the learned and true vector fields,
/// evaluated along the noiseless training states:
/// Σ_j ‖f(x_j) − f̂(x_j)‖² / Σ_j ‖f(x_j)‖².
pub fn vector_field_error<F>(model: &FlowModel, truth: F, states: ArrayView2<'_, f64>) -> Result<f64>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    let (n, m) = states.dim();
    if m == 0 {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let (fhat, _) = mlp_forward_batch(&model.params, states);
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..m {
        let ft = truth(states.column(j));
        for i in 0..n {
            let d = ft[i] - fhat[[i, j]];
            num += d * d;
            den += ft[i] * ft[i];
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateMetric(
            "true field vanishes on the whole evaluation set".into(),
        ));
    }
    Ok(num / den)
}

/// Mean squared column error between true and estimated noise:
/// (1/m) Σ_j ‖ν_j − ν̂_j‖². Equals the mean squared state error since
/// x̂_j − x_j = ν_j − ν̂_j.
pub fn noise_error(estimated: &NoiseEstimate, true_noise: ArrayView2<'_, f64>) -> Result<f64> {
    if estimated.values.dim() != true_noise.dim() {
        return Err(Error::ShapeMismatch(format!(
            "noise estimate {:?} vs truth {:?}",
            estimated.values.dim(),
            true_noise.dim()
        )));
    }
    let m = true_noise.ncols() as f64;
    let mut acc = 0.0;
    ndarray::Zip::from(&estimated.values)
        .and(&true_noise)
        .for_each(|e, t| {
            let d = t - e;
            acc += d * d;
        });
    Ok(acc / m)
}

/// Normalized forward-orbit error. The orbit of the first state is iterated
/// once across all recorded gaps, and term j (1-based, j = 1..m−1) compares
/// x_j against F̂ʲ(x_1) — the convention that pairs each state with the
/// orbit point one power higher. Result is divided by ‖X‖_F². A diverging
/// orbit yields a non-finite value rather than an error, so medians over
/// trials can discard it.
pub fn forward_orbit_error(model: &FlowModel, truth: &Trajectory) -> f64 {
    let (n, m) = truth.states.dim();
    let den: f64 = truth.states.iter().map(|v| v * v).sum();
    if m < 2 || den == 0.0 {
        return f64::NAN;
    }
    let mut cur = truth.states.column(0).to_owned();
    let mut num = 0.0;
    for j in 1..m {
        let dt = truth.times[j] - truth.times[j - 1];
        cur = match model.rk_step(cur.view(), dt) {
            Ok(next) => next,
            Err(_) => return f64::INFINITY,
        };
        if !cur.iter().all(|v| v.is_finite()) {
            return f64::INFINITY;
        }
        for i in 0..n {
            let d = truth.states[[i, j - 1]] - cur[i];
            num += d * d;
        }
    }
    num / den
}

/// Sample moments: mean, variance (1/m normalization), standardized skew,
/// and excess kurtosis (Gaussian → 0).
pub fn noise_moments<I>(samples: I) -> Result<(f64, f64, f64, f64)>
where
    I: IntoIterator<Item = f64>,
{
    let xs: Vec<f64> = samples.into_iter().collect();
    let m = xs.len();
    if m < 4 {
        return Err(Error::InvalidInput(format!(
            "moments need at least 4 samples, got {m}"
        )));
    }
    let mf = m as f64;
    let mean = xs.iter().sum::<f64>() / mf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in &xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= mf;
    m3 /= mf;
    m4 /= mf;
    if m2 == 0.0 {
        return Err(Error::DegenerateMetric(
            "zero variance: skew and kurtosis undefined".into(),
        ));
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    Ok((mean, m2, skew, kurt))
}

/// Median over trial values, ignoring non-finite entries (divergent trials).
/// Returns the median and how many entries were ignored.
pub fn median_over_trials(values: &[f64]) -> Result<(f64, usize)> {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let ignored = values.len() - finite.len();
    if finite.is_empty() {
        return Err(Error::DegenerateMetric(
            "no finite trial values to aggregate".into(),
        ));
    }
    finite.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let k = finite.len();
    let median = if k % 2 == 1 {
        finite[k / 2]
    } else {
        0.5 * (finite[k / 2 - 1] + finite[k / 2])
    };
    Ok((median, ignored))
}
