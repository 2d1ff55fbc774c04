//! Analytic benchmark systems: vector fields with reference parameter sets.
//!
//! These are used both to generate ground-truth trajectories and to score a
//! learned vector field against the truth.

use ndarray::{array, Array1, ArrayView1};
use serde::{Deserialize, Serialize};

/// Damped cubic oscillator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CubicOscParams {
    pub damping: f64,
    pub coupling: f64,
}

impl Default for CubicOscParams {
    fn default() -> Self {
        Self {
            damping: 0.1,
            coupling: 2.0,
        }
    }
}

/// Lorenz system parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

/// Double pendulum parameters (canonical/Hamiltonian formulation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoublePendulumParams {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    pub g: f64,
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            m1: 1.0,
            m2: 1.0,
            g: 10.0,
        }
    }
}

/// (x', y') = (-a x^3 + b y^3, -b x^3 - a y^3).
pub fn cubic_oscillator_field(state: ArrayView1<'_, f64>, params: &CubicOscParams) -> Array1<f64> {
    let (x, y) = (state[0], state[1]);
    let (x3, y3) = (x * x * x, y * y * y);
    array![
        -params.damping * x3 + params.coupling * y3,
        -params.coupling * x3 - params.damping * y3,
    ]
}

/// (x', y', z') = (sigma (y - x), x (rho - z) - y, x y - beta z).
pub fn lorenz_field(state: ArrayView1<'_, f64>, params: &LorenzParams) -> Array1<f64> {
    let (x, y, z) = (state[0], state[1], state[2]);
    array![
        params.sigma * (y - x),
        x * (params.rho - z) - y,
        x * y - params.beta * z,
    ]
}

/// Canonical equations of motion for the double pendulum in terms of the two
/// angles from the vertical and their conjugate momenta.
pub fn double_pendulum_field(
    state: ArrayView1<'_, f64>,
    params: &DoublePendulumParams,
) -> Array1<f64> {
    let (th1, th2, p1, p2) = (state[0], state[1], state[2], state[3]);
    let &DoublePendulumParams { l1, l2, m1, m2, g } = params;

    let d = th1 - th2;
    let (sd, cd) = d.sin_cos();
    // m1 + m2 sin^2(th1 - th2) >= m1 > 0, so every denominator below is safe.
    let den = m1 + m2 * sd * sd;

    let th1_dot = (l2 * p1 - l1 * p2 * cd) / (l1 * l1 * l2 * den);
    let th2_dot = (-m2 * l2 * p1 * cd + (m1 + m2) * l1 * p2) / (m2 * l1 * l2 * l2 * den);

    let c1 = p1 * p2 * sd / (l1 * l2 * den);
    let c2 = (m2 * l2 * l2 * p1 * p1 + (m1 + m2) * l1 * l1 * p2 * p2
        - 2.0 * m2 * l1 * l2 * p1 * p2 * cd)
        / (2.0 * l1 * l1 * l2 * l2 * den * den);
    let s2d = (2.0 * d).sin();

    let p1_dot = -(m1 + m2) * g * l1 * th1.sin() - c1 + c2 * s2d;
    let p2_dot = -m2 * g * l2 * th2.sin() + c1 - c2 * s2d;

    array![th1_dot, th2_dot, p1_dot, p2_dot]
}

/// Hamiltonian of the double pendulum. Its canonical equations
/// (dH/dp, -dH/dtheta) reproduce [`double_pendulum_field`], which makes it the
/// conserved energy along exact trajectories.
pub fn double_pendulum_energy(state: ArrayView1<'_, f64>, params: &DoublePendulumParams) -> f64 {
    let (th1, th2, p1, p2) = (state[0], state[1], state[2], state[3]);
    let &DoublePendulumParams { l1, l2, m1, m2, g } = params;

    let d = th1 - th2;
    let (sd, cd) = d.sin_cos();
    let den = m1 + m2 * sd * sd;

    let kinetic = (m2 * l2 * l2 * p1 * p1 + (m1 + m2) * l1 * l1 * p2 * p2
        - 2.0 * m2 * l1 * l2 * p1 * p2 * cd)
        / (2.0 * l1 * l1 * l2 * l2 * m2 * den);
    let potential = -(m1 + m2) * g * l1 * th1.cos() - m2 * g * l2 * th2.cos();

    kinetic + potential
}

/// One of the named benchmark systems, selectable from configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum AnalyticSystem {
    CubicOscillator(CubicOscParams),
    Lorenz(LorenzParams),
    DoublePendulum(DoublePendulumParams),
}

impl AnalyticSystem {
    /// State-space dimension.
    pub fn dim(&self) -> usize {
        match self {
            AnalyticSystem::CubicOscillator(_) => 2,
            AnalyticSystem::Lorenz(_) => 3,
            AnalyticSystem::DoublePendulum(_) => 4,
        }
    }

    /// Evaluate the vector field at a state.
    pub fn eval(&self, state: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            AnalyticSystem::CubicOscillator(p) => cubic_oscillator_field(state, p),
            AnalyticSystem::Lorenz(p) => lorenz_field(state, p),
            AnalyticSystem::DoublePendulum(p) => double_pendulum_field(state, p),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticSystem::CubicOscillator(_) => "cubic-oscillator",
            AnalyticSystem::Lorenz(_) => "lorenz",
            AnalyticSystem::DoublePendulum(_) => "double-pendulum",
        }
    }
}
