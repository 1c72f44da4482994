//! Finite-difference gradient oracle.
//!
//! Central differences around each element of the probe tensor. This is the
//! independent reference every analytic backward pass is checked against; it
//! never calls into the tape machinery itself.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `x`:
/// `(f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)` per element.
pub fn finite_diff_grad<T: Scalar>(
    f: impl Fn(&Tensor<T>) -> Result<T>,
    x: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite_diff_grad eps must be positive, got {eps}"
        )));
    }
    let eps_t = T::from_f64(eps);
    let two_eps = T::from_f64(2.0 * eps);
    let base = x.data().to_vec();
    let mut grad = vec![T::ZERO; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps_t;
        let fp = f(&Tensor::new(plus, x.shape())?)?;
        let mut minus = base.clone();
        minus[i] += -eps_t;
        let fm = f(&Tensor::new(minus, x.shape())?)?;
        grad[i] = (fp - fm) / two_eps;
    }
    Tensor::new(grad, x.shape())
}

/// Worst-case relative error between an analytic gradient and its
/// finite-difference reference. Elements where both values are below
/// `abs_floor` compare absolutely, so noise around zero does not blow up the
/// ratio.
pub fn max_relative_error<T: Scalar>(analytic: &[T], reference: &[T], abs_floor: f64) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(&a, &r)| {
            let (a, r) = (a.to_f64(), r.to_f64());
            let scale = a.abs().max(r.abs());
            if scale < abs_floor {
                (a - r).abs()
            } else {
                (a - r).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
