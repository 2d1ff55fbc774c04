//! Ground-truth trajectory generation: fixed-step RK4 with optional internal
//! substepping, an implicit-midpoint symplectic integrator for Hamiltonian
//! benchmarks, and variable-timestep sampling.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

/// Internal step cap used by ground-truth simulation so output spacing never
/// limits accuracy.
pub const DEFAULT_MAX_SUBSTEP: f64 = 1e-3;

/// A sampled trajectory: strictly increasing times and an `n x m` matrix of
/// state columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Array1<f64>,
    pub states: Array2<f64>,
}

impl Trajectory {
    pub fn new(times: Array1<f64>, states: Array2<f64>) -> Result<Self> {
        let traj = Self { times, states };
        traj.validate()?;
        Ok(traj)
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inter-sample gaps, length `m - 1`.
    pub fn gaps(&self) -> Array1<f64> {
        let m = self.times.len();
        Array1::from_shape_fn(m - 1, |j| self.times[j + 1] - self.times[j])
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.times.len();
        if self.states.ncols() != m {
            return Err(Error::ShapeMismatch(format!(
                "{} state columns vs {} times",
                self.states.ncols(),
                m
            )));
        }
        if m < 1 {
            return Err(Error::InvalidInput("empty trajectory".into()));
        }
        for j in 1..m {
            if !(self.times[j] > self.times[j - 1]) {
                return Err(Error::InvalidInput(format!(
                    "times not strictly increasing at index {j}"
                )));
            }
        }
        if self.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite state entry".into()));
        }
        Ok(())
    }
}

fn check_times(times: ArrayView1<'_, f64>) -> Result<()> {
    if times.len() < 1 {
        return Err(Error::InvalidInput("need at least one sample time".into()));
    }
    for j in 1..times.len() {
        if !(times[j] > times[j - 1]) {
            return Err(Error::InvalidInput(format!(
                "times not strictly increasing at index {j}"
            )));
        }
    }
    Ok(())
}

/// One classical RK4 step of size `h`.
pub fn rk4_step<F>(field: &F, x: &Array1<f64>, h: f64) -> Array1<f64>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    let k1 = field(x.view());
    let k2 = field((x + &(&k1 * (h / 2.0))).view());
    let k3 = field((x + &(&k2 * (h / 2.0))).view());
    let k4 = field((x + &(&k3 * h)).view());
    x + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn simulate_rk4_inner<F>(
    field: F,
    x0: ArrayView1<'_, f64>,
    times: ArrayView1<'_, f64>,
    max_substep: Option<f64>,
) -> Result<Trajectory>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    check_times(times)?;
    if let Some(cap) = max_substep {
        if !(cap > 0.0) {
            return Err(Error::InvalidInput("substep cap must be positive".into()));
        }
    }
    let n = x0.len();
    let m = times.len();
    let mut states = Array2::zeros((n, m));
    let mut x = x0.to_owned();
    states.column_mut(0).assign(&x);
    for j in 1..m {
        let gap = times[j] - times[j - 1];
        let nsub = match max_substep {
            Some(cap) => (gap / cap).ceil().max(1.0) as usize,
            None => 1,
        };
        let h = gap / nsub as f64;
        for _ in 0..nsub {
            x = rk4_step(&field, &x, h);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                context: format!("t = {}", times[j]),
            });
        }
        states.column_mut(j).assign(&x);
    }
    Trajectory::new(times.to_owned(), states)
}

/// Integrate `field` from `x0`, sampling at exactly the requested times.
/// Internally substeps so the step never exceeds [`DEFAULT_MAX_SUBSTEP`].
pub fn rk4_simulate<F>(field: F, x0: ArrayView1<'_, f64>, times: ArrayView1<'_, f64>) -> Result<Trajectory>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    simulate_rk4_inner(field, x0, times, Some(DEFAULT_MAX_SUBSTEP))
}

/// Like [`rk4_simulate`] but taking exactly one RK4 step per sample interval.
pub fn rk4_simulate_raw<F>(
    field: F,
    x0: ArrayView1<'_, f64>,
    times: ArrayView1<'_, f64>,
) -> Result<Trajectory>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    simulate_rk4_inner(field, x0, times, None)
}

/// [`rk4_simulate`] with an explicit substep cap (`None` disables substepping).
pub fn rk4_simulate_with_substep<F>(
    field: F,
    x0: ArrayView1<'_, f64>,
    times: ArrayView1<'_, f64>,
    max_substep: Option<f64>,
) -> Result<Trajectory>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    simulate_rk4_inner(field, x0, times, max_substep)
}

/// One implicit midpoint step: solves `z = x + h f((x + z) / 2)` by fixed-point
/// iteration started from the forward-Euler predictor.
pub fn implicit_midpoint_step<F>(
    field: &F,
    x: &Array1<f64>,
    h: f64,
    fp_tol: f64,
    fp_max_iter: usize,
    step_index: usize,
) -> Result<Array1<f64>>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    let mut z = x + &(field(x.view()) * h);
    let mut residual = f64::INFINITY;
    for _iter in 0..fp_max_iter {
        let mid = (x + &z) * 0.5;
        let z_next = x + &(field(mid.view()) * h);
        residual = z_next
            .iter()
            .zip(z.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        z = z_next;
        if residual < fp_tol {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    context: format!("implicit midpoint step {step_index}"),
                });
            }
            return Ok(z);
        }
    }
    Err(Error::FixedPointNonConvergence {
        step: step_index,
        residual,
        iters: fp_max_iter,
    })
}

/// Integrate with the implicit midpoint rule (symplectic, second order).
/// Like [`rk4_simulate`], internal steps are capped at
/// [`DEFAULT_MAX_SUBSTEP`] so output spacing never limits accuracy.
pub fn implicit_midpoint_simulate<F>(
    field: F,
    x0: ArrayView1<'_, f64>,
    times: ArrayView1<'_, f64>,
    fp_tol: f64,
    fp_max_iter: usize,
) -> Result<Trajectory>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    implicit_midpoint_simulate_with_substep(
        field,
        x0,
        times,
        fp_tol,
        fp_max_iter,
        Some(DEFAULT_MAX_SUBSTEP),
    )
}

/// [`implicit_midpoint_simulate`] with an explicit substep cap (`None`
/// takes one step per sample interval).
pub fn implicit_midpoint_simulate_with_substep<F>(
    field: F,
    x0: ArrayView1<'_, f64>,
    times: ArrayView1<'_, f64>,
    fp_tol: f64,
    fp_max_iter: usize,
    max_substep: Option<f64>,
) -> Result<Trajectory>
where
    F: Fn(ArrayView1<'_, f64>) -> Array1<f64>,
{
    check_times(times)?;
    if !(fp_tol > 0.0) {
        return Err(Error::InvalidInput("fp_tol must be positive".into()));
    }
    if let Some(cap) = max_substep {
        if !(cap > 0.0) {
            return Err(Error::InvalidInput("substep cap must be positive".into()));
        }
    }
    let n = x0.len();
    let m = times.len();
    let mut states = Array2::zeros((n, m));
    let mut x = x0.to_owned();
    states.column_mut(0).assign(&x);
    for j in 1..m {
        let gap = times[j] - times[j - 1];
        let nsub = match max_substep {
            Some(cap) => (gap / cap).ceil().max(1.0) as usize,
            None => 1,
        };
        let h = gap / nsub as f64;
        for _ in 0..nsub {
            x = implicit_midpoint_step(&field, &x, h, fp_tol, fp_max_iter, j)?;
        }
        states.column_mut(j).assign(&x);
    }
    Trajectory::new(times.to_owned(), states)
}

pub const DEFAULT_FP_TOL: f64 = 1e-12;
pub const DEFAULT_FP_MAX_ITER: usize = 50;

/// `m` strictly increasing times starting at `t0` with i.i.d. exponential gaps
/// of the given mean. Deterministic per seed.
pub fn sample_exponential_times(mean_dt: f64, t0: f64, m: usize, seed: u64) -> Result<Array1<f64>> {
    if !(mean_dt > 0.0) {
        return Err(Error::InvalidInput("mean_dt must be positive".into()));
    }
    if m < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0 / mean_dt).expect("positive rate");
    let mut times = Array1::zeros(m);
    times[0] = t0;
    for j in 1..m {
        let gap = loop {
            let g = exp.sample(&mut rng);
            if g > 0.0 {
                break g;
            }
        };
        times[j] = times[j - 1] + gap;
    }
    Ok(times)
}
