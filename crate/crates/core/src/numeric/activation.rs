//! Elementwise activations and the stable softmax.

use crate::numeric::matrix::Vector;

/// Logistic function, evaluated so that `exp` never overflows.
#[inline]
pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu_scalar(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

pub fn sigmoid(x: &Vector) -> Vector {
    map(x, sigmoid_scalar)
}

pub fn tanh_act(x: &Vector) -> Vector {
    map(x, f64::tanh)
}

pub fn relu(x: &Vector) -> Vector {
    map(x, relu_scalar)
}

/// Max-subtracted softmax. Panics on an empty vector.
pub fn softmax(logits: &Vector) -> Vector {
    let mut out = logits.as_slice().to_vec();
    softmax_in_place(&mut out);
    Vector::from_vec(out).expect("softmax of finite logits is finite")
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    assert!(!v.is_empty(), "softmax of an empty vector");
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn map(x: &Vector, f: impl Fn(f64) -> f64) -> Vector {
    Vector::from_vec(x.as_slice().iter().map(|&v| f(v)).collect())
        .expect("activation of finite input is finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng::Rng;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_vec(xs.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid(&v(&[0.0]))[0], 0.5);
        let sat = sigmoid(&v(&[-1000.0, 1000.0]));
        assert!(sat[0] >= 0.0 && sat[0] < 1e-300);
        assert_eq!(sat[1], 1.0);
        // 1/(1+e^-0.5) evaluated at 40 significant digits.
        assert!((sigmoid_scalar(0.5) - 0.622_459_331_201_854_564_6).abs() < 1e-12);
    }

    #[test]
    fn tanh_reference_points() {
        assert_eq!(tanh_act(&v(&[0.0]))[0], 0.0);
        assert_eq!(tanh_act(&v(&[1000.0]))[0], 1.0);
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let x = rng.uniform_range(-20.0, 20.0);
            assert_eq!(x.tanh(), -(-x).tanh());
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let u = softmax(&v(&[0.0, 0.0, 0.0]));
        for i in 0..3 {
            assert!((u[i] - 1.0 / 3.0).abs() < 1e-12);
        }
        for c in [-50.0, 0.0, 3.5, 700.0] {
            let p = softmax(&v(&[c, c + 2f64.ln()]));
            assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
            assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
        }
        let big = softmax(&v(&[1e4, 0.0]));
        assert_eq!(big[0], 1.0);
        assert!(big[1] >= 0.0 && big[1] < 1e-300);
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&v(&[-1.0, 0.0, 2.0])).as_slice(), &[0.0, 0.0, 2.0]);
        assert!(relu(&v(&[-3.0, -0.1])).as_slice().iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(xs in prop::collection::vec(-1e4f64..1e4, 1..40)) {
            let p = softmax(&v(&xs));
            let s: f64 = p.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            // Strict positivity holds while logit gaps stay below ~745 (exp underflow).
            let spread = xs.iter().cloned().fold(f64::MIN, f64::max)
                - xs.iter().cloned().fold(f64::MAX, f64::min);
            if spread < 700.0 {
                prop_assert!(p.as_slice().iter().all(|&x| x > 0.0));
            }
        }

        #[test]
        fn squashers_never_nan(x in -1e300f64..1e300) {
            let s = sigmoid_scalar(x);
            let t = x.tanh();
            prop_assert!(s.is_finite() && (0.0..=1.0).contains(&s));
            prop_assert!(t.is_finite() && (-1.0..=1.0).contains(&t));
        }

        #[test]
        fn relu_identity(x in -1e6f64..1e6) {
            prop_assert_eq!(relu_scalar(x) + relu_scalar(-x), x.abs());
        }
    }
}
