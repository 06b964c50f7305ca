//! Per-channel batch normalization over `(batch, height, width)`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running: Option<RunningStats<F>>,
}

/// Values retained for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<F> {
    mode: BnMode,
    x_hat: Tensor<F>,
    inv_std: Vec<F>,
    batch_mean: Vec<F>,
    batch_var: Vec<F>,
    count: usize,
}

/// Parameter gradients of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<F> {
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
}

impl<F: Scalar> BnGrads<F> {
    pub fn zeros(channels: usize) -> Self {
        Self { gamma: vec![F::zero(); channels], beta: vec![F::zero(); channels] }
    }

    pub fn add(&mut self, other: &Self) {
        for (a, &b) in self.gamma.iter_mut().zip(&other.gamma) {
            *a += b;
        }
        for (a, &b) in self.beta.iter_mut().zip(&other.beta) {
            *a += b;
        }
    }
}

fn planes<F: Scalar>(input: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = input.feature_dims()?;
    Ok((b, c, h * w))
}

impl<F: Scalar> BatchNorm2d<F> {
    /// gamma = 1, beta = 0, no running statistics yet.
    pub fn new(channels: usize) -> Self {
        Self { gamma: vec![F::one(); channels], beta: vec![F::zero(); channels], running: None }
    }

    /// Running mean 0 and variance 1, so eval mode is usable before training.
    pub fn with_default_stats(channels: usize) -> Self {
        let mut bn = Self::new(channels);
        bn.running = Some(RunningStats { mean: vec![F::zero(); channels], var: vec![F::one(); channels] });
        bn
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, input: &Tensor<F>, mode: BnMode) -> Result<(Tensor<F>, BnCache<F>)> {
        let (b, c, hw) = planes(input)?;
        if c != self.channels() || self.beta.len() != c {
            return Err(Error::shape("batchnorm", format!("input has {c} channels, layer has {}", self.channels())));
        }
        let x = input.data();
        let n = b * hw;
        let eps = F::from_f64(BN_EPS);
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![F::zero(); c];
                let mut var = vec![F::zero(); c];
                let nf = F::from_f64(n as f64);
                for ch in 0..c {
                    let mut s = F::zero();
                    for bi in 0..b {
                        s += x[(bi * c + ch) * hw..][..hw].iter().copied().sum::<F>();
                    }
                    let m = s / nf;
                    let mut v = F::zero();
                    for bi in 0..b {
                        for &xv in &x[(bi * c + ch) * hw..][..hw] {
                            v += (xv - m) * (xv - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v / nf;
                }
                (mean, var)
            }
            BnMode::Eval => {
                let stats = self.running.as_ref().ok_or(Error::MissingRunningStats)?;
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut x_hat = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        {
            let xh = x_hat.data_mut();
            let y = out.data_mut();
            for bi in 0..b {
                for ch in 0..c {
                    let off = (bi * c + ch) * hw;
                    for p in off..off + hw {
                        let v = (x[p] - mean[ch]) * inv_std[ch];
                        xh[p] = v;
                        y[p] = self.gamma[ch] * v + self.beta[ch];
                    }
                }
            }
        }
        out.ensure_finite("batchnorm_forward")?;
        Ok((out, BnCache { mode, x_hat, inv_std, batch_mean: mean, batch_var: var, count: n }))
    }

    /// Folds a train-mode batch's statistics into the running estimates
    /// (momentum 0.1, unbiased variance).
    pub fn update_running(&mut self, cache: &BnCache<F>) {
        if cache.mode != BnMode::Train {
            return;
        }
        let c = self.channels();
        let stats =
            self.running.get_or_insert_with(|| RunningStats { mean: vec![F::zero(); c], var: vec![F::one(); c] });
        let m = F::from_f64(BN_MOMENTUM);
        let correction =
            if cache.count > 1 { F::from_f64(cache.count as f64 / (cache.count - 1) as f64) } else { F::one() };
        for ch in 0..c {
            stats.mean[ch] = (F::one() - m) * stats.mean[ch] + m * cache.batch_mean[ch];
            stats.var[ch] = (F::one() - m) * stats.var[ch] + m * cache.batch_var[ch] * correction;
        }
    }

    pub fn backward(&self, cache: &BnCache<F>, grad_out: &Tensor<F>, grads: &mut BnGrads<F>) -> Result<Tensor<F>> {
        cache.x_hat.expect_same_shape(grad_out, "batchnorm_backward")?;
        let (b, c, hw) = planes(grad_out)?;
        let dy = grad_out.data();
        let xh = cache.x_hat.data();
        let mut grad_in = Tensor::zeros(grad_out.shape());
        let dx = grad_in.data_mut();
        let nf = F::from_f64(cache.count as f64);
        for ch in 0..c {
            let mut sum_dy = F::zero();
            let mut sum_dy_xh = F::zero();
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for p in off..off + hw {
                    sum_dy += dy[p];
                    sum_dy_xh += dy[p] * xh[p];
                }
            }
            grads.gamma[ch] += sum_dy_xh;
            grads.beta[ch] += sum_dy;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            for bi in 0..b {
                let off = (bi * c + ch) * hw;
                for p in off..off + hw {
                    dx[p] = match cache.mode {
                        BnMode::Train => scale * (dy[p] - sum_dy / nf - xh[p] * sum_dy_xh / nf),
                        BnMode::Eval => scale * dy[p],
                    };
                }
            }
        }
        grad_in.ensure_finite("batchnorm_backward")?;
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_maps_to_beta() {
        let bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::from_vec(&[2, 2, 1, 2], vec![3.0, 3.0, 1.0, 2.0, 3.0, 3.0, 5.0, 4.0]).unwrap();
        let (y, _) = bn.forward(&x, BnMode::Train).unwrap();
        for bi in 0..2 {
            assert_eq!(&y.sample(bi)[..2], &[0.0, 0.0]);
        }
    }

    #[test]
    fn single_element_batch_gives_beta() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.beta = vec![0.75];
        bn.gamma = vec![3.0];
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![42.0]).unwrap();
        let (y, _) = bn.forward(&x, BnMode::Train).unwrap();
        assert_eq!(y.data(), &[0.75]);
    }

    #[test]
    fn eval_without_stats_fails() {
        let bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(matches!(bn.forward(&x, BnMode::Eval), Err(Error::MissingRunningStats)));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm2d::<f64>::with_default_stats(1);
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
        let (_, cache) = bn.forward(&x, BnMode::Train).unwrap();
        bn.update_running(&cache);
        let s = bn.running.as_ref().unwrap();
        assert!((s.mean[0] - 0.2).abs() < 1e-15);
        // batch var 1, unbiased 2: 0.9 * 1 + 0.1 * 2
        assert!((s.var[0] - 1.1).abs() < 1e-15);
    }
}
