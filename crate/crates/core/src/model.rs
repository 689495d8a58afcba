//! The denoising auto-encoder classifier.
//!
//! A stacked LSTM encodes the (corrupted, during training) input sequence.
//! One dense decoder, shared across timesteps, reconstructs every input
//! sample from its hidden state, and a three-layer dense head classifies
//! from the final hidden state. Training minimizes
//! `(1 − λ)·MSE(x, x̂) + λ·CE(label, p̂)` against the clean signal.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::layers::{Activation, DenseCache, DenseGrads, DenseLayer, DropoutSpec, Mode};
use crate::lstm::{LstmCellParams, LstmStack, StackCache, TENSOR_NAMES};
use crate::numeric::activation::softmax_in_place;
use crate::numeric::kernels;
use crate::numeric::{Matrix, Rng, Vector};

/// Floor applied to `p̂_label` before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

static CLAMPED_PROBABILITIES: AtomicU64 = AtomicU64::new(0);

/// Number of times the classification loss had to clamp `p̂_label`.
pub fn clamped_probability_count() -> u64 {
    CLAMPED_PROBABILITIES.load(Ordering::Relaxed)
}

/// How raw records are turned into model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureTransform {
    /// IQ pairs mapped to (unit-L2 amplitude, phase/π).
    AmpPhase,
    /// Features used as stored (PSD sweeps, pre-normalized data).
    Raw,
}

impl FeatureTransform {
    pub fn code(self) -> u32 {
        match self {
            FeatureTransform::AmpPhase => 1,
            FeatureTransform::Raw => 0,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(FeatureTransform::Raw),
            1 => Some(FeatureTransform::AmpPhase),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub input_features: usize,
    pub seq_len: usize,
    pub hidden: usize,
    pub encoder_depth: usize,
    /// Widths of the two hidden classifier layers; the third has `num_classes`.
    pub classifier_widths: [usize; 2],
    pub num_classes: usize,
    /// Apply ReLU to the last classifier layer before the softmax.
    pub final_relu: bool,
    pub lambda: f64,
    pub mask_rate: f64,
    pub dropout_rate: f64,
    pub features: FeatureTransform,
}

impl ModelConfig {
    /// Reference configuration: H = 32, two LSTM layers, head 32/16/K,
    /// λ = 0.1, 10% masking, dropout 0.2.
    pub fn paper(input_features: usize, seq_len: usize, num_classes: usize) -> Self {
        ModelConfig {
            input_features,
            seq_len,
            hidden: 32,
            encoder_depth: 2,
            classifier_widths: [32, 16],
            num_classes,
            final_relu: true,
            lambda: 0.1,
            mask_rate: 0.1,
            dropout_rate: 0.2,
            features: if input_features == 2 {
                FeatureTransform::AmpPhase
            } else {
                FeatureTransform::Raw
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_features == 0 || self.seq_len == 0 || self.hidden == 0 {
            return bad("input_features, seq_len and hidden must be positive".into());
        }
        if self.encoder_depth == 0 {
            return bad("encoder_depth must be at least 1".into());
        }
        if self.classifier_widths.contains(&0) {
            return bad("classifier widths must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return bad(format!("mask_rate {} outside [0, 1)", self.mask_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.features == FeatureTransform::AmpPhase && self.input_features != 2 {
            return bad("amplitude/phase features require m = 2".into());
        }
        Ok(())
    }

    /// Tensor shapes in canonical order, derived from the configuration alone.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let h = self.hidden;
        let mut out = Vec::new();
        for l in 0..self.encoder_depth {
            let input = if l == 0 { self.input_features } else { h };
            for _ in 0..4 {
                out.push(vec![h, input]);
                out.push(vec![h, h]);
                out.push(vec![h]);
            }
        }
        let [w1, w2] = self.classifier_widths;
        for (i, o) in [(h, self.input_features), (h, w1), (w1, w2), (w2, self.num_classes)] {
            out.push(vec![o, i]);
            out.push(vec![o]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub clf: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaeModel {
    pub config: ModelConfig,
    pub encoder: LstmStack,
    pub decoder: DenseLayer,
    pub clf1: DenseLayer,
    pub clf2: DenseLayer,
    pub clf3: DenseLayer,
}

/// Gradients for every trainable tensor of a [`DaeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<LstmCellParams>,
    pub decoder: DenseGrads,
    pub clf1: DenseGrads,
    pub clf2: DenseGrads,
    pub clf3: DenseGrads,
}

/// Saved activations of one training forward pass.
#[derive(Debug, Clone)]
pub struct ModelCache {
    stack: StackCache,
    h_seq: Matrix,
    head_masks: [Vec<f64>; 3],
    dense: [DenseCache; 3],
}

/// Output of [`DaeModel::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub x_hat: Matrix,
    pub probs: Vector,
    pub cache: ModelCache,
}

impl DaeModel {
    /// Fresh model: LSTM init per [`LstmCellParams::init`], Glorot-uniform
    /// dense layers with zero bias.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let [w1, w2] = config.classifier_widths;
        let k = config.num_classes;
        Ok(DaeModel {
            encoder: LstmStack::init(config.input_features, h, config.encoder_depth, rng),
            decoder: DenseLayer::glorot(h, config.input_features, Activation::None, rng),
            clf1: DenseLayer::glorot(h, w1, Activation::Relu, rng),
            clf2: DenseLayer::glorot(w1, w2, Activation::Relu, rng),
            clf3: DenseLayer::glorot(w2, k, last_activation(&config), rng),
            config,
        })
    }

    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let [w1, w2] = config.classifier_widths;
        Ok(DaeModel {
            encoder: LstmStack::zeros(config.input_features, h, config.encoder_depth),
            decoder: DenseLayer::zeros(h, config.input_features, Activation::None),
            clf1: DenseLayer::zeros(h, w1, Activation::Relu),
            clf2: DenseLayer::zeros(w1, w2, Activation::Relu),
            clf3: DenseLayer::zeros(w2, config.num_classes, last_activation(&config)),
            config,
        })
    }

    /// Checks that every tensor agrees with `config`.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.encoder.validate()?;
        let c = &self.config;
        let [w1, w2] = c.classifier_widths;
        let expect = [
            (&self.decoder, c.hidden, c.input_features),
            (&self.clf1, c.hidden, w1),
            (&self.clf2, w1, w2),
            (&self.clf3, w2, c.num_classes),
        ];
        for (layer, input, output) in expect {
            if layer.weight.shape() != (output, input) || layer.bias.len() != output {
                return Err(Error::shape("DaeModel", (output, input), layer.weight.shape()));
            }
        }
        if self.encoder.depth() != c.encoder_depth
            || self.encoder.hidden_size() != c.hidden
            || self.encoder.input_size() != c.input_features
        {
            return Err(Error::shape(
                "DaeModel encoder",
                (c.hidden, c.input_features),
                (self.encoder.hidden_size(), self.encoder.input_size()),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.config.input_features || x.rows() == 0 {
            return Err(Error::shape(
                "DaeModel::forward",
                (self.config.seq_len, self.config.input_features),
                x.shape(),
            ));
        }
        Ok(())
    }

    fn dropout(&self, mode: Mode) -> DropoutSpec {
        DropoutSpec {
            rate: self.config.dropout_rate,
            mode,
        }
    }

    /// Full forward pass. In `Train` mode the caller passes the corrupted
    /// input and dropout draws from `rng`; in `Eval` mode no randomness is
    /// consumed.
    pub fn forward(&self, x: &Matrix, mode: Mode, rng: &mut Rng) -> Result<ForwardPass> {
        self.check_input(x)?;
        let dropout = self.dropout(mode);
        let (h_seq, h_n, stack) = self.encoder.sequence_forward(x, &dropout, rng)?;

        let n = x.rows();
        let m = self.config.input_features;
        let hs = self.config.hidden;
        let mut x_hat = vec![0.0; n * m];
        for j in 0..n {
            let out = &mut x_hat[j * m..(j + 1) * m];
            out.copy_from_slice(self.decoder.bias.as_slice());
            kernels::gemv_acc(self.decoder.weight.as_slice(), hs, h_seq.row(j), out);
        }

        let mut dense: [DenseCache; 3] = Default::default();
        let mut masks: [Vec<f64>; 3] = Default::default();
        let mut a = h_n.into_vec();
        for (idx, layer) in [&self.clf1, &self.clf2, &self.clf3].into_iter().enumerate() {
            // Dropout on h_n and on the outputs of the first two head layers.
            let mask = dropout.mask(a.len(), rng);
            a.iter_mut().zip(&mask).for_each(|(v, s)| *v *= s);
            masks[idx] = mask;
            a = layer.forward_slices(&a, &mut dense[idx]);
        }
        softmax_in_place(&mut a);

        let x_hat = Matrix::from_vec(n, m, x_hat).map_err(|_| Error::NonFinite("decoder".into()))?;
        let probs = Vector::from_vec(a).map_err(|_| Error::NonFinite("classifier".into()))?;
        Ok(ForwardPass {
            x_hat,
            probs,
            cache: ModelCache {
                stack,
                h_seq,
                head_masks: masks,
                dense,
            },
        })
    }

    /// Class posterior for one input in inference mode. Skips the decoder,
    /// which does not influence classification.
    pub fn predict(&self, x: &Matrix) -> Result<Vector> {
        self.check_input(x)?;
        let h_n = self.encoder.final_hidden(x)?;
        let [w1, w2] = self.config.classifier_widths;
        let mut o1 = vec![0.0; w1];
        let mut o2 = vec![0.0; w2];
        let mut logits = vec![0.0; self.config.num_classes];
        self.clf1.infer_into(&h_n, &mut o1);
        self.clf2.infer_into(&o1, &mut o2);
        self.clf3.infer_into(&o2, &mut logits);
        softmax_in_place(&mut logits);
        Vector::from_vec(logits).map_err(|_| Error::NonFinite("predict".into()))
    }

    pub fn classify(&self, x: &Matrix) -> Result<usize> {
        Ok(self.predict(x)?.argmax())
    }

    /// Gradients of the joint loss for a completed forward pass.
    pub fn backward(&self, pass: &ForwardPass, x_clean: &Matrix, label: usize) -> Result<ModelGrads> {
        let mut grads = ModelGrads::zeros_like(self);
        self.backward_acc(pass, x_clean, label, &mut grads)?;
        Ok(grads)
    }

    /// Adds the gradients of the joint loss into `grads`.
    pub fn backward_acc(
        &self,
        pass: &ForwardPass,
        x_clean: &Matrix,
        label: usize,
        grads: &mut ModelGrads,
    ) -> Result<()> {
        let k = self.config.num_classes;
        if label >= k {
            return Err(Error::InvalidInput(format!("label {label} >= {k} classes")));
        }
        if x_clean.shape() != pass.x_hat.shape() {
            return Err(Error::shape("DaeModel::backward", pass.x_hat.shape(), x_clean.shape()));
        }
        let cache = &pass.cache;
        let lambda = self.config.lambda;
        let (n, m) = x_clean.shape();
        let hs = self.config.hidden;

        // Classification branch: d/dlogits of λ·CE(softmax) is λ(p̂ − onehot).
        let mut upstream: Vec<f64> = pass
            .probs
            .as_slice()
            .iter()
            .enumerate()
            .map(|(c, &p)| lambda * (p - if c == label { 1.0 } else { 0.0 }))
            .collect();
        let head = [
            (&self.clf1, &mut grads.clf1),
            (&self.clf2, &mut grads.clf2),
            (&self.clf3, &mut grads.clf3),
        ];
        let mut dh_n = Vec::new();
        for (idx, (layer, g)) in head.into_iter().enumerate().rev() {
            let mut gx = vec![0.0; layer.input_size()];
            layer.backward_acc(&cache.dense[idx], &upstream, g, &mut gx)?;
            gx.iter_mut()
                .zip(&cache.head_masks[idx])
                .for_each(|(v, s)| *v *= s);
            if idx == 0 {
                dh_n = gx;
            } else {
                upstream = gx;
            }
        }

        // Reconstruction branch: d/dx̂ of (1 − λ)·mean((x − x̂)²).
        let scale = (1.0 - lambda) * 2.0 / (n * m) as f64;
        let mut dh_seq = vec![0.0; n * hs];
        let mut dxhat = vec![0.0; m];
        for j in 0..n {
            for d in 0..m {
                dxhat[d] = scale * (pass.x_hat.get(j, d) - x_clean.get(j, d));
            }
            let h_j = cache.h_seq.row(j);
            kernels::outer_acc(grads.decoder.weight.as_mut_slice(), hs, &dxhat, h_j);
            for (b, g) in grads.decoder.bias.as_mut_slice().iter_mut().zip(&dxhat) {
                *b += g;
            }
            kernels::gemv_t_acc(
                self.decoder.weight.as_slice(),
                hs,
                &dxhat,
                &mut dh_seq[j * hs..(j + 1) * hs],
            );
        }
        for (u, g) in dh_seq[(n - 1) * hs..].iter_mut().zip(&dh_n) {
            *u += g;
        }
        self.encoder
            .backward_acc(&cache.stack, dh_seq, &mut grads.encoder)?;
        Ok(())
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.encoder.depth())
            .flat_map(|l| TENSOR_NAMES.iter().map(move |t| format!("encoder.{l}.{t}")))
            .collect();
        for layer in ["decoder", "clf1", "clf2", "clf3"] {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
        }
        names
    }

    /// Every tensor in canonical order (encoder layers, decoder, head).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.encoder.layers.iter().flat_map(|p| p.tensors()).collect();
        for layer in [&self.decoder, &self.clf1, &self.clf2, &self.clf3] {
            out.push(layer.weight.as_slice());
            out.push(layer.bias.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .encoder
            .layers
            .iter_mut()
            .flat_map(|p| p.tensors_mut())
            .collect();
        for layer in [&mut self.decoder, &mut self.clf1, &mut self.clf2, &mut self.clf3] {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    /// Shapes in canonical order; biases are rank 1.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self
            .encoder
            .layers
            .iter()
            .flat_map(|p| p.tensor_shapes())
            .collect();
        for layer in [&self.decoder, &self.clf1, &self.clf2, &self.clf3] {
            out.push(vec![layer.weight.rows(), layer.weight.cols()]);
            out.push(vec![layer.bias.len()]);
        }
        out
    }
}

fn last_activation(config: &ModelConfig) -> Activation {
    if config.final_relu {
        Activation::Relu
    } else {
        Activation::None
    }
}

impl ModelGrads {
    pub fn zeros_like(model: &DaeModel) -> Self {
        ModelGrads {
            encoder: model
                .encoder
                .layers
                .iter()
                .map(|p| LstmCellParams::zeros(p.input_size(), p.hidden_size()))
                .collect(),
            decoder: DenseGrads::zeros_like(&model.decoder),
            clf1: DenseGrads::zeros_like(&model.clf1),
            clf2: DenseGrads::zeros_like(&model.clf2),
            clf3: DenseGrads::zeros_like(&model.clf3),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.encoder.iter().flat_map(|p| p.tensors()).collect();
        for g in [&self.decoder, &self.clf1, &self.clf2, &self.clf3] {
            out.push(g.weight.as_slice());
            out.push(g.bias.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .encoder
            .iter_mut()
            .flat_map(|p| p.tensors_mut())
            .collect();
        for g in [&mut self.decoder, &mut self.clf1, &mut self.clf2, &mut self.clf3] {
            out.push(g.weight.as_mut_slice());
            out.push(g.bias.as_mut_slice());
        }
        out
    }

    pub fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Zeroes exactly `round(mask_rate · n · m)` entries chosen uniformly
/// without replacement. Returns the corrupted input and an indicator
/// matrix with 1 at every zeroed entry.
pub fn corrupt(x: &Matrix, mask_rate: f64, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&mask_rate) {
        return Err(Error::Config(format!("mask_rate {mask_rate} outside [0, 1)")));
    }
    let total = x.len();
    let count = (mask_rate * total as f64).round() as usize;
    let mut tilde = x.clone();
    let mut mask = Matrix::zeros(x.rows(), x.cols());
    if count > 0 {
        for idx in rng.sample_indices(total, count) {
            tilde.as_mut_slice()[idx] = 0.0;
            mask.as_mut_slice()[idx] = 1.0;
        }
    }
    Ok((tilde, mask))
}

/// Joint loss against the clean signal. Reconstruction error is averaged
/// over all `n · m` scalars.
pub fn loss(
    x_clean: &Matrix,
    x_hat: &Matrix,
    label: usize,
    probs: &Vector,
    lambda: f64,
) -> Result<LossBreakdown> {
    if x_clean.shape() != x_hat.shape() {
        return Err(Error::shape("loss", x_clean.shape(), x_hat.shape()));
    }
    if label >= probs.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} >= {} classes",
            probs.len()
        )));
    }
    let recon = x_clean
        .as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x_clean.len() as f64;
    let mut p = probs[label];
    if p < PROB_FLOOR {
        CLAMPED_PROBABILITIES.fetch_add(1, Ordering::Relaxed);
        log::warn!("p̂[{label}] = {p:e} clamped to {PROB_FLOOR:e}");
        p = PROB_FLOOR;
    }
    let clf = -p.ln();
    Ok(LossBreakdown {
        total: (1.0 - lambda) * recon + lambda * clf,
        recon,
        clf,
        lambda,
    })
}

/// Closed-form trainable parameter count.
pub fn count_params(config: &ModelConfig) -> usize {
    let h = config.hidden;
    let m = config.input_features;
    let lstm: usize = (0..config.encoder_depth)
        .map(|l| {
            let input = if l == 0 { m } else { h };
            4 * (h * (input + h) + h)
        })
        .sum();
    let [w1, w2] = config.classifier_widths;
    let dense = |i: usize, o: usize| i * o + o;
    lstm + dense(h, m) + dense(h, w1) + dense(w1, w2) + dense(w2, config.num_classes)
}

/// Counting rules used by [`count_flops`].
pub const FLOP_CONVENTION: &str = "one multiply-accumulate = 2 FLOPs; bias add, activation \
(sigmoid/tanh/ReLU), and elementwise multiply/add = 1 FLOP each; softmax = 3 FLOPs per class; \
one forward pass over n steps: every LSTM gate and state update, decoder at every step, \
classifier once";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    pub flops: u64,
}

impl FlopCount {
    pub fn convention(&self) -> &'static str {
        FLOP_CONVENTION
    }
}

/// Forward-pass FLOPs under [`FLOP_CONVENTION`].
pub fn count_flops(config: &ModelConfig) -> FlopCount {
    let h = config.hidden as u64;
    let m = config.input_features as u64;
    let n = config.seq_len as u64;
    let per_step_lstm: u64 = (0..config.encoder_depth as u64)
        .map(|l| {
            let input = if l == 0 { m } else { h };
            // 4 gates: MACs + bias + activation; c = f·c + i·g (3); h = o·tanh(c) (2)
            4 * h * (2 * (input + h) + 1 + 1) + 3 * h + 2 * h
        })
        .sum();
    let per_step_decoder = 2 * h * m + m;
    let [w1, w2] = config.classifier_widths.map(|w| w as u64);
    let k = config.num_classes as u64;
    let relu_last = u64::from(config.final_relu);
    let head = (2 * h * w1 + 2 * w1) + (2 * w1 * w2 + 2 * w2) + (2 * w2 * k + k + relu_last * k);
    let softmax = 3 * k;
    FlopCount {
        flops: n * (per_step_lstm + per_step_decoder) + head + softmax,
    }
}
