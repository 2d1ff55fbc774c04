//! Feed-forward network with ELU hidden layers and a linear output layer.
//!
//! Forward evaluation is batched: a whole block of states goes through each
//! layer as one matrix product. Backprop reuses the stored post-activations,
//! exploiting that elu'(z) can be recovered from elu(z) alone.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential linear unit.
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU expressed through its output: for `a = elu(z)`,
/// `elu'(z) = 1` when `a > 0` and `a + 1` (= e^z) otherwise.
fn elu_prime_from_output(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

/// Dense network parameters. Layer `l` maps `widths[l] -> widths[l + 1]`;
/// every layer but the last applies ELU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidInput(
            "network needs at least an input and an output layer".into(),
        ));
    }
    if widths.iter().any(|w| *w == 0) {
        return Err(Error::InvalidInput("zero-width layer".into()));
    }
    Ok(())
}

impl MlpParams {
    /// Zero-initialized parameters for the given layer widths.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let weights = widths
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = widths[1..].iter().map(|w| Array1::zeros(*w)).collect();
        Ok(Self { weights, biases })
    }

    /// Xavier/Glorot uniform initialization: weights drawn from
    /// `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn xavier(widths: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut params.weights {
            let (fan_out, fan_in) = w.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-limit, limit);
            for v in w.iter_mut() {
                *v = dist.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut widths = vec![self.weights[0].ncols()];
        widths.extend(self.weights.iter().map(|w| w.nrows()));
        widths
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("nonempty").nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Σ_i ‖W_i‖_F² over weight matrices only (biases excluded), the
    /// quantity penalized by the weight-decay term of the loss.
    pub fn weight_squared_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Pack parameters into one vector: per layer, the weight matrix in
    /// row-major order followed by the bias.
    pub fn flatten(&self) -> Array1<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        Array1::from_vec(flat)
    }

    /// Inverse of [`MlpParams::flatten`] for the given widths.
    pub fn from_flat(widths: &[usize], flat: ArrayView1<'_, f64>) -> Result<Self> {
        check_widths(widths)?;
        let expected: usize = widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "flat vector has {} entries, widths {:?} need {}",
                flat.len(),
                widths,
                expected
            )));
        }
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for w in widths.windows(2) {
            let (rows, cols) = (w[1], w[0]);
            let wslice = flat.slice(ndarray::s![offset..offset + rows * cols]);
            weights.push(
                Array2::from_shape_vec((rows, cols), wslice.iter().copied().collect())
                    .expect("sized above"),
            );
            offset += rows * cols;
            let bslice = flat.slice(ndarray::s![offset..offset + rows]);
            biases.push(Array1::from_iter(bslice.iter().copied()));
            offset += rows;
        }
        Ok(Self { weights, biases })
    }

    /// Accumulate `scale * other` into `self` (used to add regularizer
    /// gradients into a shared buffer).
    pub fn scaled_add(&mut self, scale: f64, other: &MlpParams) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            w.scaled_add(scale, o);
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            b.scaled_add(scale, o);
        }
    }
}

/// Post-activation values saved by [`mlp_forward_batch`]; `layer_inputs[l]`
/// is the input to layer `l`, so `layer_inputs[0]` is the network input.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub layer_inputs: Vec<Array2<f64>>,
}

/// Evaluate the network on a batch of column vectors (`input_dim x B`).
pub fn mlp_forward_batch(params: &MlpParams, x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
    let layers = params.weights.len();
    let mut layer_inputs = Vec::with_capacity(layers);
    let mut a = x.to_owned();
    for l in 0..layers {
        let mut z = params.weights[l].dot(&a);
        z += &params.biases[l]
            .view()
            .insert_axis(Axis(1))
            .broadcast(z.dim())
            .expect("bias broadcast");
        layer_inputs.push(a);
        a = if l + 1 < layers {
            z.mapv_into(elu)
        } else {
            z
        };
    }
    (a, MlpCache { layer_inputs })
}

/// Evaluate the network on a single state.
pub fn mlp_forward(params: &MlpParams, x: ArrayView1<'_, f64>) -> Array1<f64> {
    let col = x.insert_axis(Axis(1));
    let (out, _) = mlp_forward_batch(params, col);
    out.index_axis(Axis(1), 0).to_owned()
}

/// Reverse-mode sweep through a cached forward pass.
///
/// `cotangent` is ∂L/∂output (`output_dim x B`). Parameter gradients are
/// accumulated into `grads` (summed over the batch); the return value is
/// ∂L/∂input (`input_dim x B`).
pub fn mlp_backprop(
    params: &MlpParams,
    cache: &MlpCache,
    cotangent: ArrayView2<'_, f64>,
    grads: &mut MlpParams,
) -> Array2<f64> {
    let layers = params.weights.len();
    debug_assert_eq!(cache.layer_inputs.len(), layers);
    let mut zbar = cotangent.to_owned();
    for l in (0..layers).rev() {
        if l + 1 < layers {
            // Hidden-layer output passed through ELU; its post-activation
            // is the input to layer l + 1.
            let act = &cache.layer_inputs[l + 1];
            ndarray::Zip::from(&mut zbar)
                .and(act)
                .for_each(|g, a| *g *= elu_prime_from_output(*a));
        }
        grads.weights[l] += &zbar.dot(&cache.layer_inputs[l].t());
        grads.biases[l] += &zbar.sum_axis(Axis(1));
        if l > 0 {
            zbar = params.weights[l].t().dot(&zbar);
        } else {
            return params.weights[0].t().dot(&zbar);
        }
    }
    unreachable!("loop returns at l = 0")
}
