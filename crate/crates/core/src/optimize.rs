//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Two-loop recursion over a bounded history of curvature pairs, cubic
//! interpolation in the line search, and conservative handling of numerical
//! trouble: pairs with unusable curvature are skipped, and non-finite or
//! diverging trial points are treated as failed steps to backtrack from,
//! never as fatal errors.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    /// Number of curvature pairs kept for the two-loop recursion.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the gradient sup-norm falls to this level.
    pub grad_tol: f64,
    /// Stop when |Δf| ≤ f_tol · max(1, |f|) on an accepted step; zero
    /// disables this criterion.
    pub f_tol: f64,
    /// Armijo (sufficient decrease) constant.
    pub c1: f64,
    /// Curvature constant of the strong Wolfe condition.
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_linesearch: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 5000,
            grad_tol: 1e-8,
            f_tol: 1e-12,
            c1: 1e-4,
            c2: 0.9,
            max_linesearch: 40,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidInput("memory must be >= 1".into()));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.max_linesearch == 0 {
            return Err(Error::InvalidInput("max_linesearch must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Gradient sup-norm reached `grad_tol`.
    GradTol,
    /// Relative objective decrease fell below `f_tol`.
    FTol,
    /// Iteration budget exhausted.
    MaxIters,
    /// No strong-Wolfe point found within the line-search budget.
    LineSearchFailure,
}

/// One accepted step, as recorded for diagnostics. `dir_deriv0` and
/// `dir_deriv_alpha` are φ'(0) and φ'(α) of the line function, so the
/// strong Wolfe conditions are checkable from the trace alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub f: f64,
    pub grad_sup: f64,
    pub alpha: f64,
    pub dir_deriv0: f64,
    pub dir_deriv_alpha: f64,
    pub f_evals: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub f_evals: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub final_grad_sup: f64,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceEntry>,
}

impl OptimizeReport {
    /// Whether the run ended at a stationarity or flatness criterion rather
    /// than by running out of budget.
    pub fn converged(&self) -> bool {
        matches!(self.stop_reason, StopReason::GradTol | StopReason::FTol)
    }
}

fn sup_norm(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn norm2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Curvature pairs must have sᵀy meaningfully positive to keep the inverse
/// Hessian estimate positive definite; borderline pairs are dropped.
fn curvature_pair_acceptable(s: &Array1<f64>, y: &Array1<f64>) -> bool {
    let sy = s.dot(y);
    sy > 1e-10 * norm2(s) * norm2(y)
}

/// Evaluation outcome: `None` marks a recoverable failure (non-finite value
/// or a divergence signalled by the objective) that the line search treats
/// as an unacceptable trial point.
type Probe = Option<(f64, Array1<f64>)>;

fn probe<F>(objective: &mut F, x: ArrayView1<'_, f64>, f_evals: &mut usize) -> Result<Probe>
where
    F: FnMut(ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)>,
{
    *f_evals += 1;
    match objective(x) {
        Ok((f, g)) => {
            if f.is_finite() && g.iter().all(|v| v.is_finite()) {
                Ok(Some((f, g)))
            } else {
                Ok(None)
            }
        }
        Err(Error::Divergence { .. }) | Err(Error::NonFiniteObjective(_)) => Ok(None),
        Err(other) => Err(other),
    }
}

/// Point on the line: step length, value, directional derivative.
#[derive(Clone, Copy)]
struct LinePoint {
    alpha: f64,
    phi: f64,
    dphi: f64,
}

/// Minimizer of the cubic through two line points; falls back to bisection
/// when the interpolant is degenerate or lands outside the safeguard zone.
fn cubic_step(a: LinePoint, b: LinePoint) -> f64 {
    let lo = a.alpha.min(b.alpha);
    let hi = a.alpha.max(b.alpha);
    let mid = 0.5 * (lo + hi);
    if !(a.phi.is_finite() && b.phi.is_finite() && a.dphi.is_finite() && b.dphi.is_finite()) {
        return mid;
    }
    let d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.dphi - a.dphi + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let alpha = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / denom;
    let margin = 0.1 * (hi - lo);
    if alpha.is_finite() && alpha > lo + margin && alpha < hi - margin {
        alpha
    } else {
        mid
    }
}

struct Accepted {
    alpha: f64,
    x: Array1<f64>,
    f: f64,
    g: Array1<f64>,
    dphi: f64,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a Array1<f64>,
    d: &'a Array1<f64>,
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    f_evals: &'a mut usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)>,
{
    fn try_alpha(&mut self, alpha: f64) -> Result<Option<(LinePoint, Array1<f64>, Array1<f64>)>> {
        let xt = self.x + &(self.d * alpha);
        Ok(probe(self.objective, xt.view(), self.f_evals)?.map(|(phi, g)| {
            let dphi = g.dot(self.d);
            (LinePoint { alpha, phi, dphi }, g, xt)
        }))
    }

    fn wolfe(&self, p: &LinePoint) -> bool {
        p.phi <= self.phi0 + self.c1 * p.alpha * self.dphi0 && p.dphi.abs() <= -self.c2 * self.dphi0
    }

    /// Bracketing phase: expand until the minimum is bracketed or Wolfe
    /// holds outright.
    fn run(&mut self, alpha_init: f64) -> Result<Option<Accepted>> {
        let mut prev = LinePoint {
            alpha: 0.0,
            phi: self.phi0,
            dphi: self.dphi0,
        };
        let mut alpha = alpha_init;
        let mut used = 0;
        while used < self.budget {
            used += 1;
            let trial = self.try_alpha(alpha)?;
            let (point, g, xt) = match trial {
                // Non-finite trial: pull back toward the last good point.
                None => {
                    alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                    continue;
                }
                Some(t) => t,
            };
            let armijo_failed = point.phi > self.phi0 + self.c1 * point.alpha * self.dphi0
                || (used > 1 && point.phi >= prev.phi);
            if armijo_failed {
                return self.zoom(prev, point, self.budget - used);
            }
            if point.dphi.abs() <= -self.c2 * self.dphi0 {
                return Ok(Some(Accepted {
                    alpha: point.alpha,
                    x: xt,
                    f: point.phi,
                    g,
                    dphi: point.dphi,
                }));
            }
            if point.dphi >= 0.0 {
                return self.zoom(point, prev, self.budget - used);
            }
            prev = point;
            alpha = (2.0 * alpha).min(1e20);
        }
        Ok(None)
    }

    /// Sectioning phase on a bracket [lo, hi] with φ(lo) the lower value.
    fn zoom(&mut self, mut lo: LinePoint, mut hi: LinePoint, budget: usize) -> Result<Option<Accepted>> {
        for _ in 0..budget {
            let width = (hi.alpha - lo.alpha).abs();
            if width < 1e-16 * lo.alpha.abs().max(1.0) {
                return Ok(None);
            }
            let alpha = cubic_step(lo, hi);
            match self.try_alpha(alpha)? {
                None => {
                    // Treat as a high point: shrink toward lo.
                    hi = LinePoint {
                        alpha,
                        phi: f64::INFINITY,
                        dphi: f64::NAN,
                    };
                }
                Some((point, g, xt)) => {
                    if point.phi > self.phi0 + self.c1 * point.alpha * self.dphi0 || point.phi >= lo.phi
                    {
                        hi = point;
                    } else {
                        if self.wolfe(&point) {
                            return Ok(Some(Accepted {
                                alpha: point.alpha,
                                x: xt,
                                f: point.phi,
                                g,
                                dphi: point.dphi,
                            }));
                        }
                        if point.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                            hi = lo;
                        }
                        lo = point;
                    }
                }
            }
        }
        Ok(None)
    }
}

/// Minimize `objective` from `x0`. The objective returns the value and the
/// full gradient; it may signal recoverable trouble by returning a
/// divergence error or non-finite values, which the line search backtracks
/// around. Returns the best point found and a report; a line-search dead
/// end is reported via `stop_reason`, not an error.
pub fn lbfgs_minimize<F>(
    mut objective: F,
    x0: Array1<f64>,
    opts: &OptimizerOptions,
) -> Result<(Array1<f64>, OptimizeReport)>
where
    F: FnMut(ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)>,
{
    opts.validate()?;
    let mut f_evals = 0usize;
    let mut x = x0;
    let (mut f, mut g) = probe(&mut objective, x.view(), &mut f_evals)?.ok_or_else(|| {
        Error::NonFiniteObjective("objective is not finite at the initial point".into())
    })?;
    let initial_value = f;

    let mut pairs: VecDeque<(Array1<f64>, Array1<f64>, f64)> = VecDeque::new();
    let mut h0_scale = 1.0;
    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let stop_reason;

    loop {
        let gsup = sup_norm(&g);
        if gsup <= opts.grad_tol {
            stop_reason = StopReason::GradTol;
            break;
        }
        if iterations >= opts.max_iters {
            stop_reason = StopReason::MaxIters;
            break;
        }

        // Two-loop recursion for d = -H·g.
        let mut d = -&g;
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * s.dot(&d);
            d.scaled_add(-a, y);
            alphas.push(a);
        }
        d *= h0_scale;
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&d);
            d.scaled_add(a - b, s);
        }

        let mut dphi0 = g.dot(&d);
        if dphi0 >= 0.0 {
            // Numerically non-descent direction: restart from steepest descent.
            pairs.clear();
            h0_scale = 1.0;
            d = -&g;
            dphi0 = g.dot(&d);
            if dphi0 >= 0.0 {
                stop_reason = StopReason::GradTol;
                break;
            }
        }

        let alpha_init = if iterations == 0 { (1.0 / gsup).min(1.0) } else { 1.0 };
        let accepted = {
            let mut search = LineSearch {
                objective: &mut objective,
                x: &x,
                d: &d,
                phi0: f,
                dphi0,
                c1: opts.c1,
                c2: opts.c2,
                budget: opts.max_linesearch,
                f_evals: &mut f_evals,
            };
            search.run(alpha_init)?
        };
        let step = match accepted {
            None => {
                stop_reason = StopReason::LineSearchFailure;
                break;
            }
            Some(a) => a,
        };

        let s = &step.x - &x;
        let y = &step.g - &g;
        if curvature_pair_acceptable(&s, &y) {
            let sy = s.dot(&y);
            h0_scale = sy / y.dot(&y);
            pairs.push_back((s, y, 1.0 / sy));
            if pairs.len() > opts.memory {
                pairs.pop_front();
            }
        }

        let df = (f - step.f).abs();
        let flat = opts.f_tol > 0.0 && df <= opts.f_tol * f.abs().max(1.0);
        iterations += 1;
        trace.push(TraceEntry {
            iter: iterations,
            f: step.f,
            grad_sup: sup_norm(&step.g),
            alpha: step.alpha,
            dir_deriv0: dphi0,
            dir_deriv_alpha: step.dphi,
            f_evals,
        });
        x = step.x;
        f = step.f;
        g = step.g;
        if flat {
            stop_reason = StopReason::FTol;
            break;
        }
    }

    let report = OptimizeReport {
        iterations,
        f_evals,
        initial_value,
        final_value: f,
        final_grad_sup: sup_norm(&g),
        stop_reason,
        trace,
    };
    Ok((x, report))
}
