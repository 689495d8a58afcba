//! Model input features: amplitude/phase from IQ, and PSD sweeps.

use crate::error::{Error, Result};
use crate::model::FeatureTransform;
use crate::numeric::Matrix;

/// Applies the model's input transform to one stored record.
pub fn prepare(features: &Matrix, transform: FeatureTransform) -> Result<Matrix> {
    match transform {
        FeatureTransform::AmpPhase => iq_to_amp_phase(features),
        FeatureTransform::Raw => Ok(features.clone()),
    }
}

/// Maps an `n × 2` IQ sequence to `(amplitude, phase)`. The amplitude
/// column is divided by its L2 norm over the sequence; the phase is
/// `atan2(Q, I) / π`, which lies in `[−1, 1]`.
pub fn iq_to_amp_phase(iq: &Matrix) -> Result<Matrix> {
    if iq.cols() != 2 || iq.rows() == 0 {
        return Err(Error::shape("iq_to_amp_phase", (iq.rows().max(1), 2), iq.shape()));
    }
    if !iq.is_finite() {
        return Err(Error::NonFinite("IQ input".into()));
    }
    let n = iq.rows();
    let mut out = Matrix::zeros(n, 2);
    let mut norm_sq = 0.0;
    for j in 0..n {
        let (i, q) = (iq.get(j, 0), iq.get(j, 1));
        let a = i.hypot(q);
        norm_sq += a * a;
        out.set(j, 0, a);
        out.set(j, 1, q.atan2(i) / std::f64::consts::PI);
    }
    if norm_sq == 0.0 {
        return Err(Error::InvalidInput(
            "all-zero IQ sequence has no amplitude normalization".into(),
        ));
    }
    let norm = norm_sq.sqrt();
    for j in 0..n {
        out.set(j, 0, out.get(j, 0) / norm);
    }
    Ok(out)
}

/// Casts a PSD sweep to an `n × 1` feature column, zero-padding short sweeps.
pub fn psd_features(sweep: &[f64], n: usize) -> Result<Matrix> {
    if sweep.is_empty() {
        return Err(Error::InvalidInput("empty PSD sweep".into()));
    }
    if sweep.len() > n {
        return Err(Error::InvalidInput(format!(
            "PSD sweep of {} bins exceeds sequence length {n}",
            sweep.len()
        )));
    }
    let mut data = sweep.to_vec();
    data.resize(n, 0.0);
    Matrix::from_vec(n, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use proptest::prelude::*;

    #[test]
    fn single_sample_closed_form() {
        let out = iq_to_amp_phase(&Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(out.get(0, 0), 1.0);
        assert!((out.get(0, 1) - 0.29517).abs() < 1e-5);
        assert!((out.get(0, 1) - (4f64).atan2(3.0) / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn negative_real_axis_is_phase_one() {
        let out = iq_to_amp_phase(&Matrix::from_vec(1, 2, vec![-1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(out.get(0, 1), 1.0);
    }

    #[test]
    fn all_zero_rejected() {
        assert!(iq_to_amp_phase(&Matrix::zeros(8, 2)).is_err());
        assert!(iq_to_amp_phase(&Matrix::zeros(8, 3)).is_err());
    }

    #[test]
    fn amplitude_has_unit_norm_for_random_sequences() {
        let mut rng = Rng::new(4);
        for n in [1, 7, 128, 1024] {
            let iq = Matrix::random_uniform(n, 2, 3.0, &mut rng);
            let out = iq_to_amp_phase(&iq).unwrap();
            let norm: f64 = (0..n).map(|j| out.get(j, 0).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn phase_in_unit_interval(v in proptest::collection::vec(-1e6f64..1e6, 2..64)) {
            let n = v.len() / 2;
            prop_assume!(v[..2 * n].iter().any(|&x| x != 0.0));
            let out = iq_to_amp_phase(&Matrix::from_vec(n, 2, v[..2 * n].to_vec()).unwrap()).unwrap();
            for j in 0..n {
                prop_assert!((-1.0..=1.0).contains(&out.get(j, 1)));
                prop_assert!(out.get(j, 0) >= 0.0);
            }
        }

        #[test]
        fn padding_keeps_prefix(sweep in proptest::collection::vec(-10f64..10.0, 1..32), extra in 0usize..8) {
            let out = psd_features(&sweep, sweep.len() + extra).unwrap();
            prop_assert_eq!(&out.as_slice()[..sweep.len()], &sweep[..]);
            prop_assert!(out.as_slice()[sweep.len()..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn psd_cases() {
        let sweep = [0.5, 0.25, 0.125, 1.0];
        assert_eq!(psd_features(&sweep, 4).unwrap().as_slice(), &sweep);
        let padded = psd_features(&sweep, 7).unwrap();
        assert_eq!(&padded.as_slice()[4..], &[0.0; 3]);
        let flat = psd_features(&[2.0; 16], 16).unwrap();
        assert!(flat.as_slice().iter().all(|&x| x == 2.0));
        assert!(psd_features(&sweep, 3).is_err());
        assert!(psd_features(&[], 3).is_err());
    }
}
