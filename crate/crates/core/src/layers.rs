//! Affine layers and dropout with explicit forward caches.
//!
//! Forward passes return a cache object instead of mutating the layer, so a
//! trained layer can be shared read-only across threads. Backward passes
//! validate that the cache belongs to a forward pass of the same shape.

use crate::error::{Error, Result};
use crate::numeric::activation::relu_scalar;
use crate::numeric::kernels;
use crate::numeric::{Matrix, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer `activation(W x + b)` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

/// Values saved by [`DenseLayer::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct DenseCache {
    input: Vec<f64>,
    pre_activation: Vec<f64>,
}

/// Gradients with the same shapes as the layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Vector,
}

impl DenseGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        DenseGrads {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: Vector::zeros(layer.bias.len()),
        }
    }
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::shape(
                "DenseLayer::new",
                weight.shape(),
                (bias.len(), 1),
            ));
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Matrix::zeros(output, input),
            bias: Vector::zeros(output),
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        DenseLayer {
            weight: Matrix::random_uniform(output, input, bound, rng),
            bias: Vector::zeros(output),
            activation,
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_size() {
            return Err(Error::shape(
                "dense_forward",
                self.weight.shape(),
                (len, 1),
            ));
        }
        Ok(())
    }

    /// Pre-activation `W x + b` written into `out`.
    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.bias.as_slice());
        kernels::gemv_acc(self.weight.as_slice(), self.input_size(), x, out);
    }

    fn activate(&self, v: &mut [f64]) {
        if self.activation == Activation::Relu {
            v.iter_mut().for_each(|z| *z = relu_scalar(*z));
        }
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, DenseCache)> {
        self.check_input(x.len())?;
        let mut pre = vec![0.0; self.output_size()];
        self.affine_into(x.as_slice(), &mut pre);
        let mut out = pre.clone();
        self.activate(&mut out);
        let out = Vector::from_vec(out).map_err(|_| Error::NonFinite("dense_forward".into()))?;
        Ok((
            out,
            DenseCache {
                input: x.as_slice().to_vec(),
                pre_activation: pre,
            },
        ))
    }

    /// Cache-free forward used for inference.
    pub(crate) fn infer_into(&self, x: &[f64], out: &mut [f64]) {
        self.affine_into(x, out);
        self.activate(out);
    }

    /// Forward that keeps only the raw slices, for the model's hot path.
    pub(crate) fn forward_slices(&self, x: &[f64], cache: &mut DenseCache) -> Vec<f64> {
        let mut pre = vec![0.0; self.output_size()];
        self.affine_into(x, &mut pre);
        let mut out = pre.clone();
        self.activate(&mut out);
        cache.input.clear();
        cache.input.extend_from_slice(x);
        cache.pre_activation = pre;
        out
    }

    fn check_cache(&self, cache: &DenseCache, upstream: usize) -> Result<()> {
        if cache.input.len() != self.input_size()
            || cache.pre_activation.len() != self.output_size()
        {
            return Err(Error::State(
                "dense_backward called without a matching forward pass".into(),
            ));
        }
        if upstream != self.output_size() {
            return Err(Error::shape(
                "dense_backward",
                self.weight.shape(),
                (upstream, 1),
            ));
        }
        Ok(())
    }

    /// Returns `(grad_w, grad_b, grad_x)` for the given upstream gradient
    /// with respect to the layer's output.
    pub fn backward(
        &self,
        cache: &DenseCache,
        upstream: &Vector,
    ) -> Result<(Matrix, Vector, Vector)> {
        let mut grads = DenseGrads::zeros_like(self);
        let mut grad_x = vec![0.0; self.input_size()];
        self.backward_acc(cache, upstream.as_slice(), &mut grads, &mut grad_x)?;
        Ok((grads.weight, grads.bias, Vector::from_vec(grad_x)?))
    }

    /// Accumulating backward: adds into `grads` and `grad_x`.
    pub(crate) fn backward_acc(
        &self,
        cache: &DenseCache,
        upstream: &[f64],
        grads: &mut DenseGrads,
        grad_x: &mut [f64],
    ) -> Result<()> {
        self.check_cache(cache, upstream.len())?;
        let delta: Vec<f64> = match self.activation {
            Activation::None => upstream.to_vec(),
            // Subgradient 0 at exactly 0.
            Activation::Relu => upstream
                .iter()
                .zip(&cache.pre_activation)
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect(),
        };
        kernels::outer_acc(
            grads.weight.as_mut_slice(),
            self.input_size(),
            &delta,
            &cache.input,
        );
        for (b, d) in grads.bias.as_mut_slice().iter_mut().zip(&delta) {
            *b += d;
        }
        kernels::gemv_t_acc(self.weight.as_slice(), self.input_size(), &delta, grad_x);
        Ok(())
    }
}

/// Inverted dropout configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
}

impl DropoutSpec {
    pub fn new(rate: f64, mode: Mode) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutSpec { rate, mode })
    }

    pub fn eval() -> Self {
        DropoutSpec {
            rate: 0.0,
            mode: Mode::Eval,
        }
    }

    pub fn is_active(&self) -> bool {
        self.mode == Mode::Train && self.rate > 0.0
    }

    /// Scale factors for `len` units: 0 for dropped units, `1/(1-rate)` for
    /// survivors, all ones when inactive. No randomness is consumed when
    /// inactive.
    pub fn mask(&self, len: usize, rng: &mut Rng) -> Vec<f64> {
        if !self.is_active() {
            return vec![1.0; len];
        }
        let keep = 1.0 / (1.0 - self.rate);
        (0..len)
            .map(|_| if rng.uniform() < self.rate { 0.0 } else { keep })
            .collect()
    }
}

/// Applies dropout, returning the output and the mask used (for backward).
pub fn dropout_apply(spec: &DropoutSpec, x: &Vector, rng: &mut Rng) -> (Vector, Vector) {
    let mask = spec.mask(x.len(), rng);
    let y: Vec<f64> = x.as_slice().iter().zip(&mask).map(|(a, m)| a * m).collect();
    (
        Vector::from_vec(y).expect("finite"),
        Vector::from_vec(mask).expect("finite"),
    )
}
