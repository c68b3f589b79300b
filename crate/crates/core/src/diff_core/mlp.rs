//! Fixed-architecture multilayer perceptrons with a hand-written reverse pass.
//!
//! Weights are stored row-major with shape `(fan_out, fan_in)`, so a batched
//! forward pass is `Z = X · Wᵀ + b` with one sample per row of `X`. Hidden
//! layers share one activation; the output layer is always linear.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply_inplace(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `delta` by the activation derivative, expressed through the
    /// activation output `a`.
    fn backprop_inplace(self, delta: &mut Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Tanh => Zip::from(delta).and(a).for_each(|d, &y| *d *= 1.0 - y * y),
            Activation::Relu => Zip::from(delta).and(a).for_each(|d, &y| {
                if y <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

/// Per-layer activations recorded by [`MlpParams::forward_tape`].
///
/// `activations[0]` is the input batch and `activations[l]` the output of
/// layer `l`, so the last entry is the network output.
#[derive(Clone, Debug)]
pub struct MlpTape {
    activations: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("tape holds at least the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }
}

/// Gradient with the same layout as an [`MlpParams`], plus the loss value it
/// was computed for.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRecord {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub loss: f64,
}

impl GradientRecord {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: params.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            loss: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &GradientRecord) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in &mut self.biases {
            *b *= s;
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn flatten(weights: &[Array2<f64>], biases: &[Array1<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in weights.iter().zip(biases) {
        out.extend(w.iter().copied());
        out.extend(b.iter().copied());
    }
    out
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Weights and biases drawn uniformly from `±1/√fan_in`.
    pub fn init_uniform<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes, activation)?;
        for (w, b) in params.weights.iter_mut().zip(params.biases.iter_mut()) {
            let bound = 1.0 / (w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
            b.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(params)
    }

    pub fn from_layers(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::invalid("need one bias per weight matrix"));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *sizes.last().unwrap() {
                return Err(Error::invalid(format!(
                    "layer {l}: weight has {} columns, expected {}",
                    w.ncols(),
                    sizes.last().unwrap()
                )));
            }
            if b.len() != w.nrows() {
                return Err(Error::invalid(format!(
                    "layer {l}: bias length {} does not match {} rows",
                    b.len(),
                    w.nrows()
                )));
            }
            sizes.push(w.nrows());
        }
        validate_sizes(&sizes)?;
        let params = Self {
            layer_sizes: sizes,
            weights,
            biases,
            activation,
        };
        if !params.is_finite() {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameters in layer order, each weight matrix row-major followed by
    /// its bias. [`GradientRecord::to_flat`] uses the same order.
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().unwrap());
            b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    /// `θ ← θ − lr · g`
    pub fn apply_gradient(&mut self, grad: &GradientRecord, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            w.scaled_add(-lr, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grad.biases) {
            b.scaled_add(-lr, g);
        }
    }

    /// `θ ← τ · θ_src + (1 − τ) · θ`
    pub fn polyak_from(&mut self, src: &MlpParams, tau: f64) {
        for (w, s) in self.weights.iter_mut().zip(&src.weights) {
            Zip::from(w).and(s).for_each(|a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
        for (w, s) in self.biases.iter_mut().zip(&src.biases) {
            Zip::from(w).and(s).for_each(|a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects input of length {}, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = self.affine(0, x);
        for l in 1..self.weights.len() {
            self.activation.apply_inplace(&mut a);
            a = self.affine(l, a.view());
        }
        Ok(a)
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(x.to_owned());
        for l in 0..self.weights.len() {
            let mut z = self.affine(l, activations[l].view());
            if l + 1 < self.weights.len() {
                self.activation.apply_inplace(&mut z);
            }
            activations.push(z);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, MlpTape { activations }))
    }

    fn affine(&self, layer: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights[layer].t());
        z += &self.biases[layer];
        z
    }

    /// Reverse pass for `Σ_rows upstream · output`.
    ///
    /// Returns the parameter gradient (summed over the batch) and the
    /// gradient with respect to each input row.
    pub fn backward(
        &self,
        tape: &MlpTape,
        upstream: ArrayView2<f64>,
    ) -> Result<(GradientRecord, Array2<f64>)> {
        let out = tape.output();
        if upstream.dim() != out.dim() {
            return Err(Error::invalid(format!(
                "upstream shape {:?} does not match output shape {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let n = self.weights.len();
        let mut grad = GradientRecord::zeros_like(self);
        let mut delta = upstream.to_owned();
        for l in (0..n).rev() {
            let a_in = &tape.activations[l];
            grad.weights[l] = delta.t().dot(a_in);
            grad.biases[l] = delta.sum_axis(Axis(0));
            let mut prev = delta.dot(&self.weights[l]);
            if l > 0 {
                self.activation.backprop_inplace(&mut prev, a_in);
            }
            delta = prev;
        }
        Ok((grad, delta))
    }

    /// Single-sample reverse pass: gradients of `upstream · f(input)` with
    /// respect to the parameters and the input.
    pub fn backward_single(
        &self,
        input: &[f64],
        upstream: &[f64],
    ) -> Result<(GradientRecord, Vec<f64>)> {
        self.check_input(input.len())?;
        if upstream.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "upstream length {} does not match output length {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let (_, tape) = self.forward_tape(x)?;
        let u = ArrayView2::from_shape((1, upstream.len()), upstream).expect("contiguous row");
        let (grad, dx) = self.backward(&tape, u)?;
        Ok((grad, dx.into_raw_vec_and_offset().0))
    }

    /// Scalar-output convenience: evaluates a one-output network on a batch.
    pub fn forward_scalar(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::invalid("network does not have a scalar output"));
        }
        Ok(self.forward_batch(x)?.column(0).to_owned())
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid("an MLP needs at least an input and an output size"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    Ok(())
}
