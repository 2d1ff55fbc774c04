//! Explicit Runge-Kutta composition of the learned vector field.
//!
//! The network f̂ plugged into a Butcher tableau (A, b) yields a discrete
//! flow map; composing it over the recorded inter-sample gaps produces
//! multi-step predictions, forward or backward (negated steps). Autonomous
//! fields make stage nodes (c) unnecessary.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::network::{mlp_backprop, mlp_forward_batch, MlpCache, MlpParams};

/// Butcher tableau of an explicit scheme: strictly lower-triangular stage
/// matrix `a` and consistent output weights `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RkTableau {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl RkTableau {
    /// Classical four-stage, fourth-order scheme.
    pub fn rk4_classical() -> Self {
        let a = ndarray::array![
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0]
        ];
        let b = ndarray::array![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
        Self { a, b }
    }

    /// Kutta's three-stage, third-order scheme.
    pub fn rk3_kutta() -> Self {
        let a = ndarray::array![[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [-1.0, 2.0, 0.0]];
        let b = ndarray::array![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
        Self { a, b }
    }

    /// Forward Euler, the smallest explicit scheme.
    pub fn euler() -> Self {
        Self {
            a: Array2::zeros((1, 1)),
            b: ndarray::array![1.0],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.b.len();
        if p == 0 {
            return Err(Error::InvalidInput("tableau needs at least one stage".into()));
        }
        if self.a.dim() != (p, p) {
            return Err(Error::ShapeMismatch(format!(
                "stage matrix {:?} does not match {p} weights",
                self.a.dim()
            )));
        }
        for i in 0..p {
            for j in i..p {
                if self.a[[i, j]] != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "explicit tableau must be strictly lower triangular; a[{i}][{j}] != 0"
                    )));
                }
            }
        }
        let bsum: f64 = self.b.sum();
        if (bsum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "inconsistent tableau: weights sum to {bsum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// A learned discrete flow map: network parameters plus the tableau that
/// turns the network into a one-interval stepper.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowModel {
    pub params: MlpParams,
    pub tableau: RkTableau,
}

impl FlowModel {
    pub fn new(params: MlpParams, tableau: RkTableau) -> Result<Self> {
        tableau.validate()?;
        if params.input_dim() != params.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "vector-field network must map n -> n, got {} -> {}",
                params.input_dim(),
                params.output_dim()
            )));
        }
        Ok(Self { params, tableau })
    }

    pub fn dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Evaluate the learned vector field itself.
    pub fn field(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        crate::network::mlp_forward(&self.params, x)
    }

    /// One Runge-Kutta step of size `dt` on a single state.
    pub fn rk_step(&self, x: ArrayView1<'_, f64>, dt: f64) -> Result<Array1<f64>> {
        let col = x.insert_axis(Axis(1)).to_owned();
        let dts = ndarray::array![dt];
        let (out, _) = rk_step_batch(&self.params, &self.tableau, col.view(), dts.view())?;
        Ok(out.index_axis(Axis(1), 0).to_owned())
    }

    /// Compose `count` steps over the recorded gaps. `count < 0` walks the
    /// gaps from the end, negated, predicting backward in time.
    pub fn flow_steps(
        &self,
        x: ArrayView1<'_, f64>,
        gaps: &[f64],
        count: i64,
    ) -> Result<Array1<f64>> {
        let steps = count.unsigned_abs() as usize;
        if steps > gaps.len() {
            return Err(Error::InvalidInput(format!(
                "need {steps} gaps, have {}",
                gaps.len()
            )));
        }
        let mut state = x.to_owned();
        for s in 0..steps {
            let dt = if count >= 0 { gaps[s] } else { -gaps[gaps.len() - 1 - s] };
            state = self.rk_step(state.view(), dt).map_err(|e| match e {
                Error::Divergence { context } => Error::Divergence {
                    context: format!("{context} (composition step {})", s + 1),
                },
                other => other,
            })?;
        }
        Ok(state)
    }

    /// Gradient of `upstream . flow_steps(x, gaps, count)` with respect to
    /// the state and the network parameters.
    pub fn flow_steps_backprop(
        &self,
        x: ArrayView1<'_, f64>,
        gaps: &[f64],
        count: i64,
        upstream: ArrayView1<'_, f64>,
    ) -> Result<(Array1<f64>, MlpParams)> {
        let steps = count.unsigned_abs() as usize;
        if steps > gaps.len() {
            return Err(Error::InvalidInput(format!(
                "need {steps} gaps, have {}",
                gaps.len()
            )));
        }
        let mut grads = MlpParams::zeros(&self.params.widths())?;
        let mut state = x.insert_axis(Axis(1)).to_owned();
        let mut caches = Vec::with_capacity(steps);
        let mut dts = Vec::with_capacity(steps);
        for s in 0..steps {
            let dt = if count >= 0 { gaps[s] } else { -gaps[gaps.len() - 1 - s] };
            let dtv = ndarray::array![dt];
            let (next, cache) = rk_step_batch(&self.params, &self.tableau, state.view(), dtv.view())?;
            caches.push(cache);
            dts.push(dtv);
            state = next;
        }
        let mut bar = upstream.insert_axis(Axis(1)).to_owned();
        for s in (0..steps).rev() {
            bar = rk_step_backprop_batch(
                &self.params,
                &self.tableau,
                &caches[s],
                dts[s].view(),
                bar.view(),
                &mut grads,
            );
        }
        Ok((bar.index_axis(Axis(1), 0).to_owned(), grads))
    }

    /// Iterate the learned map from `x0` across all gaps of `times`.
    pub fn predict_orbit(
        &self,
        x0: ArrayView1<'_, f64>,
        times: ArrayView1<'_, f64>,
    ) -> Result<Trajectory> {
        let m = times.len();
        let mut states = Array2::zeros((self.dim(), m));
        states.column_mut(0).assign(&x0);
        let mut x = x0.to_owned();
        for j in 1..m {
            let dt = times[j] - times[j - 1];
            x = self.rk_step(x.view(), dt).map_err(|e| match e {
                Error::Divergence { context } => Error::Divergence {
                    context: format!("{context} (orbit step {j}, t = {})", times[j]),
                },
                other => other,
            })?;
            states.column_mut(j).assign(&x);
        }
        Trajectory::new(times.to_owned(), states)
    }
}

/// Stage bookkeeping from one batched Runge-Kutta step, consumed by
/// [`rk_step_backprop_batch`].
#[derive(Debug)]
pub struct RkStepCache {
    pub stage_caches: Vec<MlpCache>,
}

fn check_finite(out: &Array2<f64>, what: &str) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            context: format!("non-finite {what} in Runge-Kutta step"),
        })
    }
}

/// One explicit RK step on a batch of column states with per-column step
/// sizes. Returns the advanced batch and the caches needed for backprop.
pub fn rk_step_batch(
    params: &MlpParams,
    tableau: &RkTableau,
    x: ArrayView2<'_, f64>,
    dt: ArrayView1<'_, f64>,
) -> Result<(Array2<f64>, RkStepCache)> {
    let p = tableau.stages();
    if dt.len() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} step sizes for {} states",
            dt.len(),
            x.ncols()
        )));
    }
    let dt_row = dt.insert_axis(Axis(0));
    let mut ks: Vec<Array2<f64>> = Vec::with_capacity(p);
    let mut stage_caches = Vec::with_capacity(p);
    for i in 0..p {
        let mut u = x.to_owned();
        for (j, k) in ks.iter().enumerate() {
            let aij = tableau.a[[i, j]];
            if aij != 0.0 {
                ndarray::Zip::from(&mut u)
                    .and(k)
                    .and_broadcast(&dt_row)
                    .for_each(|u, k, h| *u += aij * h * k);
            }
        }
        let (k, cache) = mlp_forward_batch(params, u.view());
        check_finite(&k, "stage value")?;
        ks.push(k);
        stage_caches.push(cache);
    }
    let mut out = x.to_owned();
    for (i, k) in ks.iter().enumerate() {
        let bi = tableau.b[i];
        ndarray::Zip::from(&mut out)
            .and(k)
            .and_broadcast(&dt_row)
            .for_each(|o, k, h| *o += bi * h * k);
    }
    check_finite(&out, "state")?;
    Ok((out, RkStepCache { stage_caches }))
}

/// Reverse sweep of [`rk_step_batch`]: given ∂L/∂x_next, accumulate network
/// gradients into `grads` and return ∂L/∂x.
pub fn rk_step_backprop_batch(
    params: &MlpParams,
    tableau: &RkTableau,
    cache: &RkStepCache,
    dt: ArrayView1<'_, f64>,
    upstream: ArrayView2<'_, f64>,
    grads: &mut MlpParams,
) -> Array2<f64> {
    let p = tableau.stages();
    let dt_row = dt.insert_axis(Axis(0));
    // k̄_i starts from the output combination x + Σ dt·b_i·k_i.
    let mut kbars: Vec<Array2<f64>> = (0..p)
        .map(|i| {
            let bi = tableau.b[i];
            let mut kb = upstream.to_owned();
            ndarray::Zip::from(&mut kb)
                .and_broadcast(&dt_row)
                .for_each(|g, h| *g *= bi * h);
            kb
        })
        .collect();
    let mut xbar = upstream.to_owned();
    for i in (0..p).rev() {
        let kb = kbars[i].clone();
        let ubar = mlp_backprop(params, &cache.stage_caches[i], kb.view(), grads);
        xbar += &ubar;
        for j in 0..i {
            let aij = tableau.a[[i, j]];
            if aij != 0.0 {
                ndarray::Zip::from(&mut kbars[j])
                    .and(&ubar)
                    .and_broadcast(&dt_row)
                    .for_each(|kb, ub, h| *kb += aij * h * ub);
            }
        }
    }
    xbar
}
