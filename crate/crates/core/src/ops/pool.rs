//! Non-overlapping 2x2 max pooling with floor semantics.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Flat input index of the winning element for every output element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

pub fn pooled_size(h: usize, w: usize) -> (usize, usize) {
    (h / 2, w / 2)
}

/// A trailing odd row or column is dropped. Ties go to the first element in
/// row-major order within the window.
pub fn maxpool2x2_forward<F: Scalar>(input: &Tensor<F>) -> Result<(Tensor<F>, PoolIndices)> {
    let (b, c, h, w) = input.feature_dims()?;
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2x2", format!("spatial size {h}x{w} is below 2x2")));
    }
    let (oh, ow) = pooled_size(h, w);
    let mut out_shape = input.shape().to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    let x = input.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&out_shape, out)?, PoolIndices { input_shape: input.shape().to_vec(), argmax }))
}

pub fn maxpool2x2_backward<F: Scalar>(indices: &PoolIndices, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::shape(
            "maxpool2x2_backward",
            format!("grad_out has {} elements, pooling produced {}", grad_out.len(), indices.argmax.len()),
        ));
    }
    let mut grad_in = Tensor::zeros(&indices.input_shape);
    let g = grad_in.data_mut();
    for (&src, &v) in indices.argmax.iter().zip(grad_out.data()) {
        g[src] += v;
    }
    Ok(grad_in)
}
