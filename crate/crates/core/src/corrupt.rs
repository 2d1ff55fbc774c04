//! Synthetic measurement noise and the smoothing-based initial noise estimate.
//!
//! Noise amplitude is expressed as a percent of each coordinate's standard
//! deviation; samples are drawn per coordinate and scaled, so doubling the
//! percent exactly doubles the noise matrix for a fixed seed.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};

use crate::error::{Error, Result};
use crate::integrate::Trajectory;

/// Observations `Y = X + N` together with the optional ground truth used to
/// score a fit.
#[derive(Debug, Clone)]
pub struct NoisyDataset {
    pub times: Array1<f64>,
    pub observations: Array2<f64>,
    pub truth: Option<Trajectory>,
    pub true_noise: Option<Array2<f64>>,
}

impl NoisyDataset {
    /// Wrap observations with no ground truth (externally ingested data).
    pub fn from_observations(times: Array1<f64>, observations: Array2<f64>) -> Result<Self> {
        let ds = Self {
            times,
            observations,
            truth: None,
            true_noise: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.observations.nrows()
    }

    pub fn len(&self) -> usize {
        self.observations.ncols()
    }

    /// Inter-sample gaps, length `m - 1`.
    pub fn gaps(&self) -> Array1<f64> {
        let m = self.times.len();
        Array1::from_shape_fn(m - 1, |j| self.times[j + 1] - self.times[j])
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.observations.dim();
        if self.times.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "{} observation columns vs {} times",
                m,
                self.times.len()
            )));
        }
        for j in 1..m {
            if !(self.times[j] > self.times[j - 1]) {
                return Err(Error::InvalidInput(format!(
                    "times not strictly increasing at index {j}"
                )));
            }
        }
        if let Some(truth) = &self.truth {
            if truth.states.dim() != (n, m) {
                return Err(Error::ShapeMismatch("truth shape differs from Y".into()));
            }
        }
        if let Some(noise) = &self.true_noise {
            if noise.dim() != (n, m) {
                return Err(Error::ShapeMismatch("noise shape differs from Y".into()));
            }
        }
        if let (Some(truth), Some(noise)) = (&self.truth, &self.true_noise) {
            // Y must equal X + N to machine precision.
            for ((i, j), y) in self.observations.indexed_iter() {
                let rebuilt = truth.states[[i, j]] + noise[[i, j]];
                let tol = 1e-12 * y.abs().max(1.0);
                if (y - rebuilt).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "Y != X + N at ({i}, {j}): {} vs {}",
                        y, rebuilt
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-coordinate noise scale: `(percent / 100) * sample std` of each row.
pub fn noise_sigma(data: ArrayView2<'_, f64>, percent: f64) -> Result<Array1<f64>> {
    if !(percent >= 0.0) {
        return Err(Error::InvalidInput("percent must be >= 0".into()));
    }
    let (n, m) = data.dim();
    if m < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let mut scales = Array1::zeros(n);
    for i in 0..n {
        let row = data.row(i);
        let mean = row.sum() / m as f64;
        let ssq: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std = (ssq / (m as f64 - 1.0)).sqrt();
        if std == 0.0 && percent > 0.0 {
            return Err(Error::ConstantCoordinate { coord: i });
        }
        scales[i] = percent / 100.0 * std;
    }
    Ok(scales)
}

fn corrupt_with<D: Distribution<f64>>(
    traj: &Trajectory,
    percent: f64,
    dist: D,
    seed: u64,
) -> Result<NoisyDataset> {
    let scales = noise_sigma(traj.states.view(), percent)?;
    let (n, m) = traj.states.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            noise[[i, j]] = scales[i] * dist.sample(&mut rng);
        }
    }
    let observations = &traj.states + &noise;
    let ds = NoisyDataset {
        times: traj.times.clone(),
        observations,
        truth: Some(traj.clone()),
        true_noise: Some(noise),
    };
    ds.validate()?;
    Ok(ds)
}

/// Corrupt a trajectory with i.i.d. zero-mean Gaussian noise scaled per
/// coordinate by [`noise_sigma`].
pub fn add_gaussian_noise(traj: &Trajectory, percent: f64, seed: u64) -> Result<NoisyDataset> {
    corrupt_with(traj, percent, Normal::new(0.0, 1.0).expect("valid"), seed)
}

/// Corrupt a trajectory with Student's T noise: standard T(dof) samples
/// multiplied by the [`noise_sigma`] scale.
pub fn add_student_t_noise(
    traj: &Trajectory,
    percent: f64,
    dof: u32,
    seed: u64,
) -> Result<NoisyDataset> {
    if dof < 3 {
        return Err(Error::InvalidInput(
            "Student's T noise needs dof >= 3 (finite variance, defined skew)".into(),
        ));
    }
    corrupt_with(traj, percent, StudentT::new(dof as f64).expect("dof > 0"), seed)
}

/// Initial noise estimate `Y - movingAverage(Y, window)` with a centered
/// window that shrinks symmetrically at the boundaries.
pub fn smooth_initial_noise(y: ArrayView2<'_, f64>, window: usize) -> Result<Array2<f64>> {
    let (n, m) = y.dim();
    if window % 2 == 0 || window < 1 || window > m {
        return Err(Error::InvalidInput(format!(
            "window must be odd and in [1, {m}], got {window}"
        )));
    }
    let r = window / 2;
    let mut est = Array2::zeros((n, m));
    for j in 0..m {
        let reff = r.min(j).min(m - 1 - j);
        let lo = j - reff;
        let hi = j + reff;
        let count = (hi - lo + 1) as f64;
        for i in 0..n {
            let mut acc = 0.0;
            for k in lo..=hi {
                acc += y[[i, k]];
            }
            est[[i, j]] = y[[i, j]] - acc / count;
        }
    }
    Ok(est)
}

pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;
