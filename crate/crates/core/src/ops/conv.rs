//! Stride-1 "same" 2D cross-correlation with a zero-skipping scatter kernel.
//!
//! For sparse inputs the forward pass walks the input operands and skips
//! every exact zero, so work scales with the number of nonzero activations;
//! dense inputs, where skipping cannot pay for its bookkeeping, use an
//! unfolded matrix product instead. Each nonzero operand
//! is charged `kh * kw * out_channels` MACs (its share of the dense count,
//! padding taps included); with that convention
//! `effective == dense * (1 - zero_fraction)` holds exactly.

use crate::error::{Error, Result};
use crate::ops::counter::MacCount;
use crate::tensor::{Scalar, Tensor};

/// Weights `[out, in, kh, kw]` and an optional per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<F> {
    pub weights: Tensor<F>,
    pub bias: Option<Vec<F>>,
}

impl<F: Scalar> ConvKernel<F> {
    pub fn new(weights: Tensor<F>, bias: Option<Vec<F>>) -> Result<Self> {
        let &[o, _, kh, kw] = weights.shape() else {
            return Err(Error::shape("conv kernel", format!("expected rank 4, got {:?}", weights.shape())));
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Config(format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if let Some(b) = &bias {
            if b.len() != o {
                return Err(Error::shape("conv kernel", format!("bias length {} != out channels {o}", b.len())));
            }
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, k: usize, with_bias: bool) -> Self {
        Self { weights: Tensor::zeros(&[out_ch, in_ch, k, k]), bias: with_bias.then(|| vec![F::zero(); out_ch]) }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Re-lays the weights for the zero-skipping loops.
    pub fn prepare(&self) -> PreparedConv<F> {
        let (o, i, k) = (self.out_channels(), self.in_channels(), self.kernel_size());
        let w = self.weights.data();
        let mut rows = vec![F::zero(); w.len()];
        for oc in 0..o {
            for ic in 0..i {
                for ky in 0..k {
                    for kx in 0..k {
                        rows[((ic * k + ky) * k + (k - 1 - kx)) * o + oc] = w[((oc * i + ic) * k + ky) * k + kx];
                    }
                }
            }
        }
        PreparedConv { out_ch: o, in_ch: i, k, weights: w.to_vec(), rows, bias: self.bias.clone() }
    }
}

/// Inputs with at least this fraction of nonzero operands take the dense
/// path; sparser ones are scattered operand by operand.
const DENSE_PATH_DENSITY: f64 = 0.1;

/// A kernel with weights laid out for both convolution paths.
#[derive(Debug, Clone)]
pub struct PreparedConv<F> {
    out_ch: usize,
    in_ch: usize,
    k: usize,
    /// `[out][in·k·k]`, the canonical layout read as a matrix.
    weights: Vec<F>,
    /// `[in][ky][k-1-kx][out]`: reversing `kx` makes the taps of one kernel
    /// row hit consecutive output pixels, so a whole row is one contiguous
    /// multiply-add of length `k * out`.
    rows: Vec<F>,
    bias: Option<Vec<F>>,
}

#[inline]
fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// Range of kernel taps `t` such that `pos + pad - t` lands in `[0, len)`.
#[inline]
fn tap_range(pos: usize, pad: usize, k: usize, len: usize) -> std::ops::Range<usize> {
    let hi = (pos + pad).min(k - 1);
    let lo = (pos + pad).saturating_sub(len - 1);
    lo..hi + 1
}

/// Range of reversed taps `r` such that `pos + r - pad` lands in `[0, len)`.
#[inline]
fn rev_range(pos: usize, pad: usize, k: usize, len: usize) -> std::ops::Range<usize> {
    let lo = pad.saturating_sub(pos);
    let hi = (len - 1 + pad - pos).min(k - 1);
    lo..hi + 1
}

/// Output columns `x` whose tap `t` reads an in-bounds input column
/// `x + t - pad`.
#[inline]
fn valid_span(t: usize, pad: usize, len: usize) -> std::ops::Range<usize> {
    let lo = pad.saturating_sub(t);
    let hi = (len + pad).saturating_sub(t).min(len);
    lo..hi.max(lo)
}

/// Unfolds `[C,H,W]` into the `[C·k·k][H·W]` patch matrix (zero padded).
fn im2col<F: Scalar>(input: &[F], c: usize, h: usize, w: usize, k: usize, pad: usize, col: &mut [F]) {
    let hw = h * w;
    col.fill(F::zero());
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let ys = valid_span(ky, pad, h);
            for kx in 0..k {
                let xs = valid_span(kx, pad, w);
                let row = &mut col[((ch * k + ky) * k + kx) * hw..][..hw];
                for y in ys.clone() {
                    let src = (y + ky - pad) * w;
                    row[y * w + xs.start..y * w + xs.end]
                        .copy_from_slice(&plane[src + xs.start + kx - pad..src + xs.end + kx - pad]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds patch gradients back onto `[C,H,W]`.
fn col2im<F: Scalar>(col: &[F], c: usize, h: usize, w: usize, k: usize, pad: usize, out: &mut [F]) {
    let hw = h * w;
    out.fill(F::zero());
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            let ys = valid_span(ky, pad, h);
            for kx in 0..k {
                let xs = valid_span(kx, pad, w);
                let row = &col[((ch * k + ky) * k + kx) * hw..][..hw];
                for y in ys.clone() {
                    let dst = (y + ky - pad) * w;
                    for x in xs.clone() {
                        plane[dst + x + kx - pad] += row[y * w + x];
                    }
                }
            }
        }
    }
}

pub(crate) fn check_padding(k: usize, padding: usize) -> Result<()> {
    if 2 * padding + 1 != k {
        return Err(Error::Config(format!("padding {padding} does not preserve spatial size for a {k}x{k} kernel")));
    }
    Ok(())
}

pub(crate) fn hwc_to_chw<F: Scalar>(src: &[F], c: usize, hw: usize, dst: &mut [F]) {
    for p in 0..hw {
        for ch in 0..c {
            dst[ch * hw + p] = src[p * c + ch];
        }
    }
}

/// Dense MACs of one same-padded convolution over one sample.
pub fn conv_dense_macs(out_ch: usize, in_ch: usize, k: usize, h: usize, w: usize) -> u64 {
    (out_ch * in_ch * k * k * h * w) as u64
}

impl<F: Scalar> PreparedConv<F> {
    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    fn check_input(&self, input: &Tensor<F>, padding: usize) -> Result<(usize, usize, usize, usize)> {
        check_padding(self.k, padding)?;
        let (b, c, h, w) = input.feature_dims()?;
        if c != self.in_ch {
            return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {}", self.in_ch)));
        }
        Ok((b, c, h, w))
    }

    /// Accumulates one sample's contribution into an HWC accumulator,
    /// skipping zero operands.
    fn scatter_sample(&self, input: &[F], h: usize, w: usize, pad: usize, acc: &mut [F]) {
        let (o, k) = (self.out_ch, self.k);
        let hw = h * w;
        for y in 0..h {
            let ky_range = tap_range(y, pad, k, h);
            for c in 0..self.in_ch {
                let line = &input[c * hw + y * w..][..w];
                for (x, &v) in line.iter().enumerate() {
                    if v.is_zero() {
                        continue;
                    }
                    let r = rev_range(x, pad, k, w);
                    let len = r.len() * o;
                    let ox0 = x + r.start - pad;
                    for ky in ky_range.clone() {
                        let oy = y + pad - ky;
                        let wrow = &self.rows[((c * k + ky) * k + r.start) * o..][..len];
                        let arow = &mut acc[(oy * w + ox0) * o..][..len];
                        axpy(v, wrow, arow);
                    }
                }
            }
        }
    }

    /// Forward pass over a `[C,H,W]` or `[B,C,H,W]` input. Samples whose
    /// operands are mostly zero are scattered nonzero by nonzero; denser
    /// ones go through a blocked matrix product. Either way the tally
    /// charges only the nonzero operands.
    pub fn forward(&self, input: &Tensor<F>, padding: usize, tally: &mut MacCount) -> Result<Tensor<F>> {
        let (b, c, h, w) = self.check_input(input, padding)?;
        let (o, k) = (self.out_ch, self.k);
        let hw = h * w;
        let mut out_shape = input.shape().to_vec();
        out_shape[input.rank() - 3] = o;
        let mut out = Tensor::zeros(&out_shape);
        let per_operand = (k * k * o) as u64;
        let mut acc = Vec::new();
        let mut col = Vec::new();
        for s in 0..b {
            let x = input.feature_sample(s);
            let nnz = x.iter().filter(|v| !v.is_zero()).count();
            tally.add(conv_dense_macs(o, c, k, h, w), nnz as u64 * per_operand);
            let dst = out.feature_sample_mut(s);
            if (nnz as f64) < DENSE_PATH_DENSITY * x.len() as f64 {
                acc.resize(hw * o, F::zero());
                match &self.bias {
                    Some(bias) => acc.chunks_exact_mut(o).for_each(|px| px.copy_from_slice(bias)),
                    None => acc.fill(F::zero()),
                }
                self.scatter_sample(x, h, w, padding, &mut acc);
                hwc_to_chw(&acc, o, hw, dst);
            } else {
                col.resize(c * k * k * hw, F::zero());
                im2col(x, c, h, w, k, padding, &mut col);
                match &self.bias {
                    Some(bias) => {
                        for (plane, &bv) in dst.chunks_exact_mut(hw).zip(bias) {
                            plane.fill(bv);
                        }
                    }
                    None => dst.fill(F::zero()),
                }
                F::gemm(false, false, o, hw, c * k * k, &self.weights, &col, F::one(), dst);
            }
        }
        out.ensure_finite("conv2d_forward")?;
        Ok(out)
    }

    /// Backward pass. Weight and bias gradients are accumulated into `grads`;
    /// the input gradient is returned when requested.
    pub fn backward(
        &self,
        input: &Tensor<F>,
        grad_out: &Tensor<F>,
        padding: usize,
        grads: &mut ConvGrads<F>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<F>>> {
        let (b, c, h, w) = self.check_input(input, padding)?;
        let (o, k) = (self.out_ch, self.k);
        let (gb, go, gh, gw) = grad_out.feature_dims()?;
        if (gb, go, gh, gw) != (b, o, h, w) {
            return Err(Error::shape(
                "conv2d_backward",
                format!("grad_out {:?} does not match input {:?}", grad_out.shape(), input.shape()),
            ));
        }
        if grads.weights.len() != self.weights.len() || grads.bias.is_some() != self.bias.is_some() {
            return Err(Error::shape("conv2d_backward", "gradient accumulator built for a different kernel"));
        }
        let hw = h * w;
        let ckk = c * k * k;
        let mut col = vec![F::zero(); ckk * hw];
        let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
        for s in 0..b {
            let g = grad_out.feature_sample(s);
            if let Some(gbias) = grads.bias.as_mut() {
                for (acc, plane) in gbias.iter_mut().zip(g.chunks_exact(hw)) {
                    *acc += plane.iter().copied().sum::<F>();
                }
            }
            // dW[o][ckk] += G[o][hw] · colᵀ
            im2col(input.feature_sample(s), c, h, w, k, padding, &mut col);
            F::gemm(false, true, o, ckk, hw, g, &col, F::one(), &mut grads.weights);
            if let Some(gin) = grad_in.as_mut() {
                // dcol[ckk][hw] = Wᵀ · G
                F::gemm(true, false, ckk, hw, o, &self.weights, g, F::zero(), &mut col);
                col2im(&col, c, h, w, k, padding, gin.feature_sample_mut(s));
            }
        }
        if let Some(g) = &grad_in {
            g.ensure_finite("conv2d_backward")?;
        }
        Ok(grad_in)
    }

    pub fn grads(&self) -> ConvGrads<F> {
        ConvGrads {
            out_ch: self.out_ch,
            in_ch: self.in_ch,
            k: self.k,
            weights: vec![F::zero(); self.weights.len()],
            bias: self.bias.as_ref().map(|b| vec![F::zero(); b.len()]),
        }
    }
}

/// Gradient accumulator for one kernel.
#[derive(Debug, Clone)]
pub struct ConvGrads<F> {
    out_ch: usize,
    in_ch: usize,
    k: usize,
    /// `[out, in, kh, kw]`
    weights: Vec<F>,
    bias: Option<Vec<F>>,
}

impl<F: Scalar> ConvGrads<F> {
    pub fn add(&mut self, other: &ConvGrads<F>) {
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn finish(&self) -> ConvKernel<F> {
        let (o, i, k) = (self.out_ch, self.in_ch, self.k);
        ConvKernel {
            weights: Tensor::from_vec(&[o, i, k, k], self.weights.clone()).expect("sized above"),
            bias: self.bias.clone(),
        }
    }
}

/// Zero-skipping convolution; see the module docs for the MAC convention.
pub fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &ConvKernel<F>,
    padding: usize,
    tally: &mut MacCount,
) -> Result<Tensor<F>> {
    kernel.prepare().forward(input, padding, tally)
}

/// Plain gather loop nest that performs every MAC, zeros included.
pub fn conv2d_dense<F: Scalar>(
    input: &Tensor<F>,
    kernel: &ConvKernel<F>,
    padding: usize,
    tally: &mut MacCount,
) -> Result<Tensor<F>> {
    let (o, i, k) = (kernel.out_channels(), kernel.in_channels(), kernel.kernel_size());
    check_padding(k, padding)?;
    let (b, c, h, w) = input.feature_dims()?;
    if c != i {
        return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {i}")));
    }
    let wts = kernel.weights.data();
    let mut out_shape = input.shape().to_vec();
    out_shape[input.rank() - 3] = o;
    let mut out = Tensor::zeros(&out_shape);
    let hw = h * w;
    for s in 0..b {
        let inp = input.feature_sample(s);
        let dst = out.feature_sample_mut(s);
        for oc in 0..o {
            let b0 = kernel.bias.as_ref().map_or(F::zero(), |b| b[oc]);
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = b0;
                    for ic in 0..i {
                        for ky in 0..k {
                            let Some(y) = (oy + ky).checked_sub(padding).filter(|&y| y < h) else {
                                continue;
                            };
                            for kx in 0..k {
                                let Some(x) = (ox + kx).checked_sub(padding).filter(|&x| x < w) else {
                                    continue;
                                };
                                acc += wts[((oc * i + ic) * k + ky) * k + kx] * inp[ic * hw + y * w + x];
                            }
                        }
                    }
                    dst[oc * hw + oy * w + ox] = acc;
                }
            }
        }
        let dense = conv_dense_macs(o, i, k, h, w);
        tally.add(dense, dense);
    }
    out.ensure_finite("conv2d_dense")?;
    Ok(out)
}

/// Gradients of [`conv2d_forward`] for a single call.
#[derive(Debug, Clone)]
pub struct ConvBackward<F> {
    pub grad_input: Tensor<F>,
    pub grad_weights: Tensor<F>,
    pub grad_bias: Option<Vec<F>>,
}

pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &ConvKernel<F>,
    grad_out: &Tensor<F>,
    padding: usize,
) -> Result<ConvBackward<F>> {
    let prepared = kernel.prepare();
    let mut grads = prepared.grads();
    let grad_input = prepared.backward(input, grad_out, padding, &mut grads, true)?.expect("input gradient requested");
    let finished = grads.finish();
    Ok(ConvBackward { grad_input, grad_weights: finished.weights, grad_bias: finished.bias })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_kernel(w: f64, b: f64) -> ConvKernel<f64> {
        ConvKernel::new(Tensor::from_vec(&[1, 1, 1, 1], vec![w]).unwrap(), Some(vec![b])).unwrap()
    }

    #[test]
    fn single_mac() {
        let x = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let mut tally = MacCount::default();
        let y = conv2d_forward(&x, &scalar_kernel(3.0, 1.0), 0, &mut tally).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(tally, MacCount { dense: 1, effective: 1 });
    }

    #[test]
    fn all_zero_input_yields_bias_and_no_effective_macs() {
        let x = Tensor::<f64>::zeros(&[8, 10, 10]);
        let mut k = ConvKernel::<f64>::zeros(4, 8, 3, true);
        k.weights = Tensor::from_fn(&[4, 8, 3, 3], |i| (i as f64 * 0.37).sin());
        k.bias = Some(vec![0.5, -1.0, 2.0, 0.0]);
        let mut tally = MacCount::default();
        let y = conv2d_forward(&x, &k, 1, &mut tally).unwrap();
        for oc in 0..4 {
            assert!(y.data()[oc * 100..(oc + 1) * 100].iter().all(|&v| v == k.bias.as_ref().unwrap()[oc]));
        }
        assert_eq!(tally.effective, 0);
        assert_eq!(tally.dense, 4 * 8 * 9 * 100);
    }

    #[test]
    fn scalar_backward() {
        let x = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let r = conv2d_backward(&x, &scalar_kernel(3.0, 1.0), &g, 0).unwrap();
        assert_eq!(r.grad_input.data(), &[3.0]);
        assert_eq!(r.grad_weights.data(), &[2.0]);
        assert_eq!(r.grad_bias.unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64 - 7.0);
        let k = ConvKernel::new(Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f64).cos()), Some(vec![1.0; 3])).unwrap();
        let r = conv2d_backward(&x, &k, &Tensor::zeros(&[3, 3, 4]), 1).unwrap();
        assert!(r.grad_input.data().iter().all(|v| *v == 0.0));
        assert!(r.grad_weights.data().iter().all(|v| *v == 0.0));
        assert!(r.grad_bias.unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f64>::zeros(&[3, 4, 4]);
        let k = ConvKernel::<f64>::zeros(2, 2, 3, false);
        let err = conv2d_forward(&x, &k, 1, &mut MacCount::default()).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn non_same_padding_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        let k = ConvKernel::<f64>::zeros(1, 1, 3, false);
        assert!(matches!(conv2d_forward(&x, &k, 0, &mut MacCount::default()), Err(Error::Config(_))));
    }

    #[test]
    fn dense_input_charges_dense_count() {
        let x = Tensor::from_fn(&[2, 5, 3], |i| 1.0 + i as f64);
        let k = ConvKernel::<f64>::zeros(3, 2, 3, true);
        let mut tally = MacCount::default();
        conv2d_forward(&x, &k, 1, &mut tally).unwrap();
        assert_eq!(tally.dense, tally.effective);
    }

    #[test]
    fn batched_matches_per_sample() {
        let x = Tensor::from_fn(&[3, 2, 4, 5], |i| ((i * 7919) % 13) as f64 - 6.0);
        let k =
            ConvKernel::new(Tensor::from_fn(&[4, 2, 3, 3], |i| (i as f64 * 0.1).sin()), Some(vec![0.1; 4])).unwrap();
        let mut t = MacCount::default();
        let y = conv2d_forward(&x, &k, 1, &mut t).unwrap();
        for s in 0..3 {
            let xs = Tensor::from_vec(&[2, 4, 5], x.sample(s).to_vec()).unwrap();
            let ys = conv2d_forward(&xs, &k, 1, &mut MacCount::default()).unwrap();
            assert_eq!(ys.data(), y.sample(s));
        }
    }
}
