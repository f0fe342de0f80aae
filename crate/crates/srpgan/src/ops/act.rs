//! Elementwise activations with explicit gradients.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// max(x, slope*x). Ties at exactly 0 take the negative-side slope, and the
/// backward mask follows the same convention.
pub fn leaky_relu<E: Scalar>(x: &Tensor<E>, slope: f64) -> Tensor<E> {
    let s = E::from_f64(slope);
    x.map(|v| if v > E::zero() { v } else { s * v })
}

/// d/dx leaky_relu = 1 for x > 0, slope otherwise (including x == 0).
pub fn leaky_relu_backward<E: Scalar>(
    x: &Tensor<E>,
    slope: f64,
    grad_out: &Tensor<E>,
) -> Result<Tensor<E>> {
    let s = E::from_f64(slope);
    let data = x
        .data()
        .iter()
        .zip(grad_out.data().iter())
        .map(|(&v, &g)| if v > E::zero() { g } else { s * g })
        .collect();
    Tensor::from_vec(x.dims(), data)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    // Branch on sign so neither exp overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| E::from_f64(sigmoid_scalar(v.into_f64())))
}

/// d sigmoid/dx = y*(1-y), expressed from the saved forward output.
pub fn sigmoid_backward<E: Scalar>(out: &Tensor<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    let data = out
        .data()
        .iter()
        .zip(grad_out.data().iter())
        .map(|(&y, &g)| {
            let yf = y.into_f64();
            E::from_f64(g.into_f64() * yf * (1.0 - yf))
        })
        .collect();
    Tensor::from_vec(out.dims(), data)
}

/// log(sigmoid(x)) = min(x, 0) - ln(1 + e^{-|x|}); finite for any finite x
/// (never computes sigmoid first, so large |x| cannot overflow or round to
/// log(0)).
#[inline]
pub fn log_sigmoid_scalar(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn log_sigmoid<E: Scalar>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| E::from_f64(log_sigmoid_scalar(v.into_f64())))
}

/// d/dx log(sigmoid(x)) = sigmoid(-x).
pub fn log_sigmoid_backward<E: Scalar>(x: &Tensor<E>, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data().iter())
        .map(|(&v, &g)| E::from_f64(g.into_f64() * sigmoid_scalar(-v.into_f64())))
        .collect();
    Tensor::from_vec(x.dims(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_uniform, RngStream};

    #[test]
    fn leaky_relu_values_and_tie_convention() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = leaky_relu(&x, 0.2);
        assert_eq!(y.data(), &[-0.2, 0.0, 2.0]);
        let g = Tensor::<f64>::filled(&[3], 1.0).unwrap();
        let gx = leaky_relu_backward(&x, 0.2, &g).unwrap();
        // x == 0 takes the negative-side slope.
        assert_eq!(gx.data(), &[0.2, 0.2, 1.0]);
    }

    #[test]
    fn leaky_relu_positively_homogeneous_bit_exact_for_pow2_scale() {
        let mut s = RngStream::new(3);
        let x = rng_uniform::<f32>(&mut s, &[256], -2.0, 2.0).unwrap();
        let scaled = x.map(|v| v * 4.0);
        let lhs = leaky_relu(&scaled, 0.2);
        let rhs = leaky_relu(&x, 0.2).map(|v| v * 4.0);
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn log_sigmoid_reference_points() {
        let x = Tensor::<f64>::from_vec(&[3], vec![0.0, 100.0, -100.0]).unwrap();
        let y = log_sigmoid(&x);
        assert!((y.data()[0] - (-(2.0f64).ln())).abs() < 1e-15);
        // At +100 the value is -log(1+e^-100) ~ -3.72e-44: finite, tiny.
        assert!(y.data()[1] < 0.0 && y.data()[1] > -1e-40);
        assert!(y.data()[1].is_finite());
        // At -100 it tracks x itself.
        assert!((y.data()[2] - (-100.0)).abs() < 1e-12);
    }

    #[test]
    fn log_sigmoid_monotone_and_negative() {
        let mut s = RngStream::new(4);
        let x = rng_uniform::<f64>(&mut s, &[64], -30.0, 30.0).unwrap();
        let y = log_sigmoid(&x);
        assert!(y.data().iter().all(|&v| v < 0.0 && v.is_finite()));
        let mut pairs: Vec<(f64, f64)> = x.data().iter().copied().zip(y.data().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn log_sigmoid_never_overflows_at_f32() {
        let x = Tensor::<f32>::from_vec(&[4], vec![500.0, -500.0, 88.0, -88.0]).unwrap();
        let y = log_sigmoid(&x);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigmoid_output_in_unit_interval_and_backward_uses_output() {
        let mut s = RngStream::new(5);
        let x = rng_uniform::<f64>(&mut s, &[128], -50.0, 50.0).unwrap();
        let y = sigmoid(&x);
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let g = Tensor::<f64>::filled(&[128], 1.0).unwrap();
        let gx = sigmoid_backward(&y, &g).unwrap();
        // Max of y(1-y) is 0.25 at x=0.
        assert!(gx.data().iter().all(|&v| (0.0..=0.25).contains(&v)));
    }
}
