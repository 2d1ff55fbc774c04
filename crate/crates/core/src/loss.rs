//! Windowed, weighted, regularized objective over network parameters and
//! per-sample noise estimates, with its exact gradient.
//!
//! Each interior observation y_j anchors a window: the denoised state
//! y_j − ν̂_j is stepped i = ±1..±q intervals and compared (after adding the
//! target's noise estimate) against the observed y_{j+i}. Residuals are
//! weighted ω₀ρ^{−|i|}, matching the exponential growth of multi-step
//! prediction error. Quadratic penalties γ‖N̂‖²_F and βΣ‖W‖²_F complete the
//! loss; γ > 0 is what rules out the trivial minimizer (zero dynamics,
//! noise absorbing everything).
//!
//! Anchors are processed in fixed-size blocks so every network evaluation
//! is a matrix-matrix product; block order is sequential and deterministic.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::corrupt::NoisyDataset;
use crate::error::{Error, Result};
use crate::network::MlpParams;
use crate::stepper::{rk_step_batch, rk_step_backprop_batch, RkStepCache, RkTableau};

/// Anchors per evaluation block. Purely an execution detail: results do not
/// depend on it beyond floating-point summation order.
pub const ANCHOR_BLOCK: usize = 512;

fn default_q() -> usize {
    3
}
fn default_rho() -> f64 {
    1.5
}
fn default_omega0() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    1e-6
}

/// Objective hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Window half-width: number of forward and backward steps per anchor.
    #[serde(default = "default_q")]
    pub q: usize,
    /// Decay base of the residual weight schedule (≥ 1).
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Base residual weight.
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    /// Coefficient of ‖N̂‖²_F.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Coefficient of Σ‖W_i‖²_F (weight matrices only).
    #[serde(default = "default_beta")]
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            q: default_q(),
            rho: default_rho(),
            omega0: default_omega0(),
            gamma: default_gamma(),
            beta: default_beta(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(Error::InvalidInput("window half-width q must be >= 1".into()));
        }
        if !(self.rho >= 1.0) {
            return Err(Error::InvalidInput("weight decay base rho must be >= 1".into()));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::InvalidInput("base weight omega0 must be > 0".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput("gamma must be finite and >= 0".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput("beta must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Per-sample noise estimates N̂ for one dataset (columns are ν̂_j).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub values: Array2<f64>,
}

impl NoiseEstimate {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            values: Array2::zeros((n, m)),
        }
    }

    /// Warm start from the moving-average smoother.
    pub fn from_smoothing(y: ArrayView2<'_, f64>, window: usize) -> Result<Self> {
        Ok(Self {
            values: crate::corrupt::smooth_initial_noise(y, window)?,
        })
    }

    pub fn validate_for(&self, data: &NoisyDataset) -> Result<()> {
        if self.values.dim() != data.observations.dim() {
            return Err(Error::ShapeMismatch(format!(
                "noise estimate {:?} vs observations {:?}",
                self.values.dim(),
                data.observations.dim()
            )));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite noise estimate".into()));
        }
        Ok(())
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Residual weights ω_{|i|} = ω₀ρ^{−|i|} for |i| = 1..q; the i = 0 residual
/// is identically zero and carries no weight.
pub fn window_weights(cfg: &LossConfig) -> Array1<f64> {
    Array1::from_shape_fn(cfg.q, |s| cfg.omega0 * cfg.rho.powi(-((s + 1) as i32)))
}

fn check_instance(data: &NoisyDataset, noise: &NoiseEstimate, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    noise.validate_for(data)?;
    if data.len() <= 2 * cfg.q {
        return Err(Error::InvalidInput(format!(
            "need more than {} samples for window half-width {}, got {}",
            2 * cfg.q,
            cfg.q,
            data.len()
        )));
    }
    Ok(())
}

/// Step sizes for chain step `step` (1-based) of a block of consecutive
/// anchors starting at `j0`: forward uses the gaps ahead of each anchor,
/// backward the negated gaps behind it.
fn block_dts(gaps: &[f64], j0: usize, bsz: usize, step: usize, forward: bool) -> Array1<f64> {
    if forward {
        Array1::from_iter(gaps[j0 + step - 1..j0 + step - 1 + bsz].iter().copied())
    } else {
        Array1::from_iter(gaps[j0 - step..j0 - step + bsz].iter().map(|g| -g))
    }
}

fn prediction_value(
    params: &MlpParams,
    tableau: &RkTableau,
    times: ArrayView1<'_, f64>,
    y: ArrayView2<'_, f64>,
    nu: ArrayView2<'_, f64>,
    cfg: &LossConfig,
) -> Result<f64> {
    let m = y.ncols();
    let q = cfg.q;
    let weights = window_weights(cfg);
    let gaps: Vec<f64> = (0..m - 1).map(|k| times[k + 1] - times[k]).collect();
    let last_anchor = m - 1 - q;
    let mut total = 0.0;
    let mut j0 = q;
    while j0 <= last_anchor {
        let bsz = ANCHOR_BLOCK.min(last_anchor - j0 + 1);
        let x0 = &y.slice(s![.., j0..j0 + bsz]) - &nu.slice(s![.., j0..j0 + bsz]);
        for forward in [true, false] {
            let mut state = x0.clone();
            for step in 1..=q {
                let dts = block_dts(&gaps, j0, bsz, step, forward);
                let (next, _) = rk_step_batch(params, tableau, state.view(), dts.view())?;
                state = next;
                let tgt0 = if forward { j0 + step } else { j0 - step };
                let mut ssq = 0.0;
                Zip::from(&state)
                    .and(&nu.slice(s![.., tgt0..tgt0 + bsz]))
                    .and(&y.slice(s![.., tgt0..tgt0 + bsz]))
                    .for_each(|st, nv, yv| {
                        let r = st + nv - yv;
                        ssq += r * r;
                    });
                total += weights[step - 1] * ssq;
            }
        }
        j0 += bsz;
    }
    Ok(total)
}

fn prediction_grad(
    params: &MlpParams,
    tableau: &RkTableau,
    times: ArrayView1<'_, f64>,
    y: ArrayView2<'_, f64>,
    nu: ArrayView2<'_, f64>,
    cfg: &LossConfig,
    theta_grad: &mut MlpParams,
    nu_grad: &mut Array2<f64>,
) -> Result<f64> {
    let (n, m) = y.dim();
    let q = cfg.q;
    let weights = window_weights(cfg);
    let gaps: Vec<f64> = (0..m - 1).map(|k| times[k + 1] - times[k]).collect();
    let last_anchor = m - 1 - q;
    let mut total = 0.0;
    let mut j0 = q;
    while j0 <= last_anchor {
        let bsz = ANCHOR_BLOCK.min(last_anchor - j0 + 1);
        let x0 = &y.slice(s![.., j0..j0 + bsz]) - &nu.slice(s![.., j0..j0 + bsz]);
        for forward in [true, false] {
            let mut caches: Vec<RkStepCache> = Vec::with_capacity(q);
            let mut dts_all: Vec<Array1<f64>> = Vec::with_capacity(q);
            let mut cotangents: Vec<Array2<f64>> = Vec::with_capacity(q);
            let mut state = x0.clone();
            for step in 1..=q {
                let dts = block_dts(&gaps, j0, bsz, step, forward);
                let (next, cache) = rk_step_batch(params, tableau, state.view(), dts.view())?;
                state = next;
                let tgt0 = if forward { j0 + step } else { j0 - step };
                // Residual r = F̂(…) + ν̂_target − y_target contributes
                // ω‖r‖² to the value; 2ωr is both the cotangent of the
                // chain state and the gradient on the target noise column.
                let wi = weights[step - 1];
                let mut cot = Array2::zeros((n, bsz));
                let mut ssq = 0.0;
                Zip::from(&mut cot)
                    .and(&state)
                    .and(&nu.slice(s![.., tgt0..tgt0 + bsz]))
                    .and(&y.slice(s![.., tgt0..tgt0 + bsz]))
                    .for_each(|c, st, nv, yv| {
                        let r = st + nv - yv;
                        ssq += r * r;
                        *c = 2.0 * wi * r;
                    });
                total += wi * ssq;
                nu_grad
                    .slice_mut(s![.., tgt0..tgt0 + bsz])
                    .zip_mut_with(&cot, |g, c| *g += *c);
                caches.push(cache);
                dts_all.push(dts);
                cotangents.push(cot);
            }
            // Reverse sweep, injecting each intermediate state's cotangent.
            let mut bar = cotangents.pop().expect("q >= 1");
            for step in (1..=q).rev() {
                bar = rk_step_backprop_batch(
                    params,
                    tableau,
                    &caches[step - 1],
                    dts_all[step - 1].view(),
                    bar.view(),
                    theta_grad,
                );
                if step > 1 {
                    bar += &cotangents[step - 2];
                }
            }
            // Chain root is x0 = y_j − ν̂_j.
            nu_grad
                .slice_mut(s![.., j0..j0 + bsz])
                .zip_mut_with(&bar, |g, b| *g -= *b);
        }
        j0 += bsz;
    }
    Ok(total)
}

/// Full objective on one dataset.
pub fn loss_value(
    params: &MlpParams,
    tableau: &RkTableau,
    data: &NoisyDataset,
    noise: &NoiseEstimate,
    cfg: &LossConfig,
) -> Result<f64> {
    check_instance(data, noise, cfg)?;
    let pred = prediction_value(
        params,
        tableau,
        data.times.view(),
        data.observations.view(),
        noise.values.view(),
        cfg,
    )?;
    Ok(pred + cfg.gamma * noise.frobenius_sq() + cfg.beta * params.weight_squared_norm())
}

/// Multi-trajectory objective: the sum of [`loss_value`] over datasets with
/// shared parameters and per-dataset noise estimates.
pub fn loss_multi(
    params: &MlpParams,
    tableau: &RkTableau,
    datasets: &[NoisyDataset],
    noises: &[NoiseEstimate],
    cfg: &LossConfig,
) -> Result<f64> {
    if datasets.is_empty() || datasets.len() != noises.len() {
        return Err(Error::InvalidInput(format!(
            "{} datasets with {} noise estimates",
            datasets.len(),
            noises.len()
        )));
    }
    let mut total = 0.0;
    for (data, noise) in datasets.iter().zip(noises) {
        total += loss_value(params, tableau, data, noise, cfg)?;
    }
    Ok(total)
}

/// Value and exact gradient, split into parameter and per-dataset noise
/// parts.
pub fn loss_gradient_parts(
    params: &MlpParams,
    tableau: &RkTableau,
    datasets: &[NoisyDataset],
    noises: &[NoiseEstimate],
    cfg: &LossConfig,
) -> Result<(f64, MlpParams, Vec<Array2<f64>>)> {
    if datasets.is_empty() || datasets.len() != noises.len() {
        return Err(Error::InvalidInput(format!(
            "{} datasets with {} noise estimates",
            datasets.len(),
            noises.len()
        )));
    }
    let widths = params.widths();
    let mut theta_grad = MlpParams::zeros(&widths)?;
    let mut nu_grads = Vec::with_capacity(noises.len());
    let mut total = 0.0;
    for (data, noise) in datasets.iter().zip(noises) {
        check_instance(data, noise, cfg)?;
        let mut nu_grad = &noise.values * (2.0 * cfg.gamma);
        total += prediction_grad(
            params,
            tableau,
            data.times.view(),
            data.observations.view(),
            noise.values.view(),
            cfg,
            &mut theta_grad,
            &mut nu_grad,
        )?;
        total += cfg.gamma * noise.frobenius_sq();
        // Each dataset term carries its own copy of the weight penalty.
        total += cfg.beta * params.weight_squared_norm();
        nu_grads.push(nu_grad);
    }
    let decay = 2.0 * cfg.beta * datasets.len() as f64;
    for (gw, w) in theta_grad.weights.iter_mut().zip(&params.weights) {
        gw.scaled_add(decay, w);
    }
    Ok((total, theta_grad, nu_grads))
}

/// Flat joint vector layout: network parameters first (see
/// [`MlpParams::flatten`]), then each N̂_k in row-major order.
pub fn pack_joint(params: &MlpParams, noises: &[NoiseEstimate]) -> Array1<f64> {
    let total = params.param_count() + noises.iter().map(|n| n.values.len()).sum::<usize>();
    let mut flat = Vec::with_capacity(total);
    flat.extend(params.flatten().iter());
    for noise in noises {
        flat.extend(noise.values.iter());
    }
    Array1::from_vec(flat)
}

/// Inverse of [`pack_joint`].
pub fn unpack_joint(
    widths: &[usize],
    shapes: &[(usize, usize)],
    flat: ArrayView1<'_, f64>,
) -> Result<(MlpParams, Vec<NoiseEstimate>)> {
    let pcount: usize = widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
    let expected = pcount + shapes.iter().map(|(n, m)| n * m).sum::<usize>();
    if flat.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "joint vector has {} entries, expected {}",
            flat.len(),
            expected
        )));
    }
    let params = MlpParams::from_flat(widths, flat.slice(s![..pcount]))?;
    let mut noises = Vec::with_capacity(shapes.len());
    let mut offset = pcount;
    for &(n, m) in shapes {
        let vals = Array2::from_shape_vec(
            (n, m),
            flat.slice(s![offset..offset + n * m]).iter().copied().collect(),
        )
        .expect("sized above");
        noises.push(NoiseEstimate { values: vals });
        offset += n * m;
    }
    Ok((params, noises))
}

/// Value plus the flat gradient over [θ; N̂₁; …; N̂_k].
pub fn loss_gradient(
    params: &MlpParams,
    tableau: &RkTableau,
    datasets: &[NoisyDataset],
    noises: &[NoiseEstimate],
    cfg: &LossConfig,
) -> Result<(f64, Array1<f64>)> {
    let (value, theta_grad, nu_grads) = loss_gradient_parts(params, tableau, datasets, noises, cfg)?;
    let packed: Vec<NoiseEstimate> = nu_grads
        .into_iter()
        .map(|values| NoiseEstimate { values })
        .collect();
    Ok((value, pack_joint(&theta_grad, &packed)))
}
