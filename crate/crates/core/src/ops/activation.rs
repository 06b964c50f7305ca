//! Elementwise nonlinearities. Backward maps take the forward *output*
//! where that is cheaper (sigmoid, tanh) and the forward input for relu.

use crate::tensor::{Scalar, Tensor};

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
pub fn relu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

/// d sigmoid / dx expressed through the output `s`.
#[inline]
pub fn sigmoid_grad_from_output<F: Scalar>(s: F) -> F {
    s * (F::one() - s)
}

/// d tanh / dx expressed through the output `t`.
#[inline]
pub fn tanh_grad_from_output<F: Scalar>(t: F) -> F {
    F::one() - t * t
}

/// Zero at `x == 0`.
#[inline]
pub fn relu_grad<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

pub fn sigmoid_tensor<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid)
}

pub fn tanh_tensor<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.tanh())
}

pub fn relu_tensor<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(relu)
}

pub fn sigmoid_backward<F: Scalar>(output: &Tensor<F>, grad_out: &Tensor<F>) -> crate::Result<Tensor<F>> {
    output.zip_map(grad_out, |s, g| g * sigmoid_grad_from_output(s))
}

pub fn tanh_backward<F: Scalar>(output: &Tensor<F>, grad_out: &Tensor<F>) -> crate::Result<Tensor<F>> {
    output.zip_map(grad_out, |t, g| g * tanh_grad_from_output(t))
}

pub fn relu_backward<F: Scalar>(input: &Tensor<F>, grad_out: &Tensor<F>) -> crate::Result<Tensor<F>> {
    input.zip_map(grad_out, |x, g| g * relu_grad(x))
}
