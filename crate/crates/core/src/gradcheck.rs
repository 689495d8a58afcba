//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Coordinates probed per tensor; larger tensors are sampled.
pub const MAX_PROBES_PER_TENSOR: usize = 256;

/// A unit whose parameters can be perturbed and whose scalar loss and
/// analytic gradients can be evaluated at the current parameters.
pub trait Differentiable {
    fn tensor_names(&self) -> Vec<String>;
    fn tensor_mut(&mut self, index: usize) -> &mut [f64];
    fn loss(&mut self) -> Result<f64>;
    /// Analytic gradients, one buffer per tensor in `tensor_names` order.
    fn gradients(&mut self) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub parameter_name: String,
    pub max_relative_error: f64,
    pub probes: usize,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against `(f(θ+h) − f(θ−h)) / 2h` for every
/// tensor of `unit`, one report per tensor.
pub fn grad_check<D: Differentiable + ?Sized>(
    unit: &mut D,
    rng: &mut Rng,
    tolerance: f64,
) -> Result<Vec<GradCheckReport>> {
    let names = unit.tensor_names();
    let analytic = unit.gradients()?;
    if analytic.len() != names.len() {
        return Err(Error::State(format!(
            "{} gradient buffers for {} tensors",
            analytic.len(),
            names.len()
        )));
    }
    let mut reports = Vec::with_capacity(names.len());
    for (t, name) in names.iter().enumerate() {
        let len = unit.tensor_mut(t).len();
        if analytic[t].len() != len {
            return Err(Error::State(format!(
                "gradient for {name} has {} entries, tensor has {len}",
                analytic[t].len()
            )));
        }
        let coords = if len <= MAX_PROBES_PER_TENSOR {
            (0..len).collect()
        } else {
            let mut c = rng.sample_indices(len, MAX_PROBES_PER_TENSOR);
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            let original = unit.tensor_mut(t)[i];
            unit.tensor_mut(t)[i] = original + STEP;
            let plus = unit.loss();
            unit.tensor_mut(t)[i] = original - STEP;
            let minus = unit.loss();
            unit.tensor_mut(t)[i] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while probing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[t][i], numeric));
        }
        reports.push(GradCheckReport {
            parameter_name: name.clone(),
            max_relative_error: worst,
            probes: coords.len(),
            passed: worst < tolerance,
        });
    }
    Ok(reports)
}

/// Turns the first failing report into an error.
pub fn ensure_passed(reports: &[GradCheckReport], tolerance: f64) -> Result<()> {
    match reports.iter().find(|r| !r.passed) {
        Some(r) => Err(Error::GradCheck {
            parameter: r.parameter_name.clone(),
            error: r.max_relative_error,
            tolerance,
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// loss = ½‖W x − y‖², gradient (W x − y) xᵀ. `scale` corrupts the
    /// analytic gradient.
    struct Quadratic {
        w: Vec<f64>,
        x: Vec<f64>,
        y: Vec<f64>,
        scale: f64,
        constant: bool,
    }

    impl Quadratic {
        fn residual(&self) -> Vec<f64> {
            let cols = self.x.len();
            self.y
                .iter()
                .enumerate()
                .map(|(o, yo)| {
                    (0..cols).map(|k| self.w[o * cols + k] * self.x[k]).sum::<f64>() - yo
                })
                .collect()
        }
    }

    impl Differentiable for Quadratic {
        fn tensor_names(&self) -> Vec<String> {
            vec!["w".into()]
        }
        fn tensor_mut(&mut self, _: usize) -> &mut [f64] {
            &mut self.w
        }
        fn loss(&mut self) -> Result<f64> {
            if self.constant {
                return Ok(3.0);
            }
            Ok(0.5 * self.residual().iter().map(|r| r * r).sum::<f64>())
        }
        fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
            if self.constant {
                return Ok(vec![vec![0.0; self.w.len()]]);
            }
            let r = self.residual();
            let cols = self.x.len();
            let mut g = vec![0.0; self.w.len()];
            for (o, ro) in r.iter().enumerate() {
                for k in 0..cols {
                    g[o * cols + k] = ro * self.x[k] * self.scale;
                }
            }
            Ok(vec![g])
        }
    }

    fn quadratic(scale: f64, constant: bool) -> Quadratic {
        let mut rng = Rng::new(21);
        Quadratic {
            w: (0..12).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            x: (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            y: (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            scale,
            constant,
        }
    }

    #[test]
    fn exact_gradient_of_quadratic_passes_tightly() {
        let reports = grad_check(&mut quadratic(1.0, false), &mut Rng::new(0), 1e-9).unwrap();
        assert!(reports[0].passed, "{reports:?}");
        assert!(reports[0].max_relative_error < 1e-9);
    }

    #[test]
    fn constant_loss_reports_zero_error() {
        let reports = grad_check(&mut quadratic(1.0, true), &mut Rng::new(0), 1e-4).unwrap();
        assert_eq!(reports[0].max_relative_error, 0.0);
        assert!(reports[0].passed);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let reports = grad_check(&mut quadratic(1.01, false), &mut Rng::new(0), 1e-4).unwrap();
        assert!(!reports[0].passed);
        assert!(ensure_passed(&reports, 1e-4).is_err());
    }

    struct Exploding {
        theta: [f64; 1],
    }
    impl Differentiable for Exploding {
        fn tensor_names(&self) -> Vec<String> {
            vec!["theta".into()]
        }
        fn tensor_mut(&mut self, _: usize) -> &mut [f64] {
            &mut self.theta
        }
        fn loss(&mut self) -> Result<f64> {
            Ok(f64::NAN)
        }
        fn gradients(&mut self) -> Result<Vec<Vec<f64>>> {
            Ok(vec![vec![0.0]])
        }
    }

    #[test]
    fn non_finite_loss_names_the_parameter() {
        let err = grad_check(&mut Exploding { theta: [0.0] }, &mut Rng::new(0), 1e-4).unwrap_err();
        assert!(err.to_string().contains("theta[0]"), "{err}");
    }
}
