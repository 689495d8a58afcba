//! Gradient-check probes for the dense layer and the full model, shared by
//! the `gradcheck` subcommand and the test suites.

use crate::error::Result;
use crate::gradcheck::{grad_check, Differentiable, GradCheckReport};
use crate::layers::{Activation, DenseLayer, Mode};
use crate::data::iq_to_amp_phase;
use crate::model::{corrupt, loss, DaeModel, ModelConfig};
use crate::numeric::{Matrix, Rng, Stream, Vector};

/// Full model with a fixed corrupted input, clean target and label. Dropout
/// is disabled so the loss is a deterministic function of the parameters.
pub struct ModelProbe {
    pub model: DaeModel,
    pub x_clean: Matrix,
    pub x_tilde: Matrix,
    pub label: usize,
}

impl ModelProbe {
    /// The reference architecture shrunk to H = 3 on n = 5 amplitude/phase
    /// samples with K = 3, as used by the model in training: 10% masking
    /// and λ = 0.1. Dropout is off.
    pub fn random(seed: u64) -> Result<Self> {
        let config = ModelConfig {
            hidden: 3,
            dropout_rate: 0.0,
            ..ModelConfig::paper(2, 5, 3)
        };
        let root = Rng::new(seed);
        let model = DaeModel::new(config, &mut root.substream(Stream::Init))?;
        let mut data = root.substream(Stream::Synthesis);
        let iq = Matrix::from_vec(5, 2, (0..10).map(|_| data.normal()).collect())?;
        let x_clean = iq_to_amp_phase(&iq)?;
        let (x_tilde, _) = corrupt(&x_clean, config.mask_rate, &mut data)?;
        let label = data.below(3);
        Ok(ModelProbe {
            model,
            x_clean,
            x_tilde,
            label,
        })
    }
}

impl Differentiable for ModelProbe {
    fn tensor_names(&self) -> Vec<String> {
        self.model.tensor_names()
    }
    fn tensor_mut(&mut self, index: usize) -> &mut [f64] {
        self.model.tensors_mut().swap_remove(index)
    }
    fn loss(&mut self) -> Result<f64> {
        let pass = self.model.forward(&self.x_tilde, Mode::Eval, &mut Rng::new(0))?;
        let l = loss(
            &self.x_clean,
            &pass.x_hat,
            self.label,
            &pass.probs,
            self.model.config.lambda,
        )?;
        Ok(l.total)
    }
    fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        let pass = self.model.forward(&self.x_tilde, Mode::Eval, &mut Rng::new(0))?;
        let grads = self.model.backward(&pass, &self.x_clean, self.label)?;
        Ok(grads.tensors().into_iter().map(<[f64]>::to_vec).collect())
    }
}

/// Dense layer under `loss = <a, layer(x)>`.
pub struct DenseProbe {
    pub layer: DenseLayer,
    pub x: Vector,
    pub a: Vec<f64>,
}

impl DenseProbe {
    pub fn random(seed: u64, activation: Activation) -> Self {
        let mut rng = Rng::new(seed).substream(Stream::Init);
        let mut layer = DenseLayer::glorot(6, 4, activation, &mut rng);
        layer.bias.as_mut_slice().iter_mut().for_each(|b| *b = 0.3);
        let x = Vector::from_vec((0..6).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
            .expect("finite");
        let a = (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        DenseProbe { layer, x, a }
    }
}

impl Differentiable for DenseProbe {
    fn tensor_names(&self) -> Vec<String> {
        vec!["weight".into(), "bias".into()]
    }
    fn tensor_mut(&mut self, index: usize) -> &mut [f64] {
        match index {
            0 => self.layer.weight.as_mut_slice(),
            _ => self.layer.bias.as_mut_slice(),
        }
    }
    fn loss(&mut self) -> Result<f64> {
        let (y, _) = self.layer.forward(&self.x)?;
        Ok(y.as_slice().iter().zip(&self.a).map(|(y, a)| y * a).sum())
    }
    fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
        let (_, cache) = self.layer.forward(&self.x)?;
        let (gw, gb, _) = self.layer.backward(&cache, &Vector::from_vec(self.a.clone())?)?;
        Ok(vec![gw.into_vec(), gb.into_vec()])
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub unit: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Runs the dense and full-model checks for seeds `0..seeds`.
pub fn gradient_suite(seeds: u64, tolerance: f64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for seed in 0..seeds {
        let mut probe_rng = Rng::new(seed).substream(Stream::Shuffle);
        for (unit, activation) in [("dense", Activation::None), ("dense_relu", Activation::Relu)] {
            let mut probe = DenseProbe::random(seed, activation);
            for report in grad_check(&mut probe, &mut probe_rng, tolerance)? {
                out.push(SuiteResult { unit, seed, report });
            }
        }
        let mut probe = ModelProbe::random(seed)?;
        for report in grad_check(&mut probe, &mut probe_rng, tolerance)? {
            out.push(SuiteResult {
                unit: "model",
                seed,
                report,
            });
        }
    }
    Ok(out)
}
