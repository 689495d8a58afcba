//! Adam.

use crate::error::{Error, Result};
use crate::model::{DaeModel, ModelGrads};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero moments shaped like `shapes`, β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn with_sizes(sizes: impl IntoIterator<Item = usize>, lr: f64) -> Self {
        let m1: Vec<Vec<f64>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            m2: m1.clone(),
            m1,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &DaeModel, lr: f64) -> Self {
        Self::with_sizes(model.tensors().iter().map(|t| t.len()), lr)
    }

    /// One update over parallel lists of parameter and gradient tensors.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step_tensors(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, names: &[String]) -> Result<()> {
        if params.len() != self.m1.len() || grads.len() != self.m1.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m1.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != self.m1[i].len() || g.len() != p.len() {
                return Err(Error::shape("adam_step", (self.m1[i].len(), 1), (g.len(), 1)));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                let name = names.get(i).map_or_else(|| format!("tensor {i}"), String::clone);
                return Err(Error::NonFinite(format!("gradient {name}[{j}]")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m1, m2) = (&mut self.m1[i], &mut self.m2[i]);
            for j in 0..p.len() {
                m1[j] = b1 * m1[j] + (1.0 - b1) * g[j];
                m2[j] = b2 * m2[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m1[j] / bc1;
                let v_hat = m2[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, model: &mut DaeModel, grads: &ModelGrads) -> Result<()> {
        let names = model.tensor_names();
        self.step_tensors(model.tensors_mut(), grads.tensors(), &names)
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["theta".into()]
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut adam = AdamState::with_sizes([3], 0.001);
        let mut p = [0.5, -1.0, 2.0];
        for _ in 0..10 {
            adam.step_tensors(vec![&mut p], vec![&[0.0; 3]], &names()).unwrap();
        }
        assert_eq!(p, [0.5, -1.0, 2.0]);
        assert_eq!(adam.t, 10);
    }

    #[test]
    fn first_step_is_minus_lr() {
        let mut adam = AdamState::with_sizes([1], 0.001);
        let mut p = [0.0];
        adam.step_tensors(vec![&mut p], vec![&[1.0]], &names()).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((p[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn descends_a_parabola() {
        // Independent scalar simulation of the same recurrences. At lr = 1e-3
        // Adam moves at most about lr per step, so 100 steps cannot pass 0.9.
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.01, 1e-8);
        let (mut th, mut m, mut v) = (1.0f64, 0.0, 0.0);
        let mut adam = AdamState::with_sizes([1], lr);
        let mut p = [1.0];
        let mut history = vec![1.0];
        for t in 1..=100 {
            let g = 2.0 * th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            th -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            let gp = [2.0 * p[0]];
            adam.step_tensors(vec![&mut p], vec![&gp], &names()).unwrap();
            assert_eq!(p[0], th);
            history.push(p[0]);
        }
        assert!(p[0].abs() < 0.9);
        assert!(history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_changes_nothing() {
        let mut adam = AdamState::with_sizes([2], 0.001);
        let mut p = [1.0, 1.0];
        let err = adam
            .step_tensors(vec![&mut p], vec![&[0.1, f64::NAN]], &names())
            .unwrap_err();
        assert!(err.to_string().contains("theta[1]"), "{err}");
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!(adam.t, 0);
    }
}
