//! Fully connected layer with zero-skipping accounting.

use crate::error::{Error, Result};
use crate::ops::counter::MacCount;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// `[out, in]`
    pub weights: Tensor<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<F> {
    pub weights: Tensor<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> LinearGrads<F> {
    pub fn add(&mut self, other: &Self) {
        for (a, &b) in self.weights.data_mut().iter_mut().zip(other.weights.data()) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl<F: Scalar> Linear<F> {
    pub fn new(weights: Tensor<F>, bias: Vec<F>) -> Result<Self> {
        let &[o, _] = weights.shape() else {
            return Err(Error::shape("linear", format!("weights must be rank 2, got {:?}", weights.shape())));
        };
        if bias.len() != o {
            return Err(Error::shape("linear", format!("bias length {} != outputs {o}", bias.len())));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weights: Tensor::zeros(&[outputs, inputs]), bias: vec![F::zero(); outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn grads(&self) -> LinearGrads<F> {
        LinearGrads { weights: Tensor::zeros(self.weights.shape()), bias: vec![F::zero(); self.bias.len()] }
    }

    fn rows(&self, input: &Tensor<F>) -> Result<usize> {
        let n_in = self.inputs();
        match *input.shape() {
            [n] if n == n_in => Ok(1),
            [b, n] if n == n_in => Ok(b),
            _ => Err(Error::shape("linear", format!("input {:?} does not end in {n_in} features", input.shape()))),
        }
    }

    /// Affine map over `[in]` or `[B, in]`. Zero inputs are skipped.
    pub fn forward(&self, input: &Tensor<F>, tally: &mut MacCount) -> Result<Tensor<F>> {
        let rows = self.rows(input)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let mut out_shape = input.shape().to_vec();
        *out_shape.last_mut().unwrap() = n_out;
        let mut out = Tensor::zeros(&out_shape);
        let w = self.weights.data();
        for r in 0..rows {
            let x = &input.data()[r * n_in..(r + 1) * n_in];
            let y = &mut out.data_mut()[r * n_out..(r + 1) * n_out];
            let mut nnz = 0u64;
            y.copy_from_slice(&self.bias);
            for (j, &xv) in x.iter().enumerate() {
                if xv.is_zero() {
                    continue;
                }
                nnz += 1;
                for (o, yo) in y.iter_mut().enumerate() {
                    *yo += w[o * n_in + j] * xv;
                }
            }
            tally.add((n_in * n_out) as u64, nnz * n_out as u64);
        }
        out.ensure_finite("fc_forward")?;
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, input: &Tensor<F>, grad_out: &Tensor<F>, grads: &mut LinearGrads<F>) -> Result<Tensor<F>> {
        let rows = self.rows(input)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if grad_out.len() != rows * n_out {
            return Err(Error::shape("fc_backward", format!("grad_out {:?}", grad_out.shape())));
        }
        let w = self.weights.data();
        let mut grad_in = Tensor::zeros(input.shape());
        for r in 0..rows {
            let x = &input.data()[r * n_in..(r + 1) * n_in];
            let g = &grad_out.data()[r * n_out..(r + 1) * n_out];
            let gi = &mut grad_in.data_mut()[r * n_in..(r + 1) * n_in];
            let gw = grads.weights.data_mut();
            for (o, &go) in g.iter().enumerate() {
                grads.bias[o] += go;
                let wrow = &w[o * n_in..(o + 1) * n_in];
                let gwrow = &mut gw[o * n_in..(o + 1) * n_in];
                for j in 0..n_in {
                    gi[j] += wrow[j] * go;
                    gwrow[j] += x[j] * go;
                }
            }
        }
        grad_in.ensure_finite("fc_backward")?;
        Ok(grad_in)
    }
}

/// Free-function form of [`Linear::forward`].
pub fn fc_forward<F: Scalar>(input: &Tensor<F>, layer: &Linear<F>, tally: &mut MacCount) -> Result<Tensor<F>> {
    layer.forward(input, tally)
}
