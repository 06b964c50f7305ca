//! ConvLSTM and change-based ConvLSTM cells.
//!
//! Both cells share one parameter layout: the four gate kernels of each path
//! are stacked along the output-channel axis in `i, f, g, o` order, so a
//! single convolution per path produces all gate pre-activations. The
//! change-based cell differs only in its recurrent operand: instead of
//! `H_{t-1}` it consumes the thresholded change `H_{t-1} - H_{t-2}`, which is
//! mostly exact zeros and lets the hidden-path convolution skip work.
//!
//! All tensors are `[C, H, W]` or batched `[B, C, H, W]`.

use crate::error::{Error, Result};
use crate::ops::activation::{sigmoid, sigmoid_grad_from_output, tanh_grad_from_output};
use crate::ops::conv::{ConvGrads, ConvKernel, PreparedConv};
use crate::ops::counter::MacCount;
use crate::tensor::{Scalar, Tensor};

/// Which recurrence a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    /// Hidden path consumes `H_{t-1}`.
    Vanilla,
    /// Hidden path consumes the thresholded change of `H`.
    ChangeBased,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Vanilla => "vanilla",
            CellKind::ChangeBased => "cb",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" | "convlstm" => Ok(CellKind::Vanilla),
            "cb" | "change-based" | "cb-convlstm" => Ok(CellKind::ChangeBased),
            other => Err(Error::Config(format!("unknown cell kind {other:?} (expected vanilla or cb)"))),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a hidden-state change is compared against the threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum DeltaRule {
    /// Keep `d` when `|d| >= theta`.
    #[default]
    Magnitude,
    /// Keep `d` when `d >= theta`; negative changes are always dropped.
    Signed,
}

impl DeltaRule {
    pub fn as_str(self) -> &'static str {
        match self {
            DeltaRule::Magnitude => "magnitude",
            DeltaRule::Signed => "signed",
        }
    }
}

impl std::str::FromStr for DeltaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(DeltaRule::Magnitude),
            "signed" => Ok(DeltaRule::Signed),
            other => Err(Error::Config(format!("unknown delta rule {other:?} (expected magnitude or signed)"))),
        }
    }
}

/// Change threshold applied to the recurrent operand of a change-based cell.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeltaThreshold {
    theta: f64,
    pub rule: DeltaRule,
}

impl DeltaThreshold {
    pub fn new(theta: f64) -> Result<Self> {
        Self::with_rule(theta, DeltaRule::Magnitude)
    }

    pub fn with_rule(theta: f64, rule: DeltaRule) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::Config(format!("delta threshold must be finite and >= 0, got {theta}")));
        }
        Ok(Self { theta, rule })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn passes<F: Scalar>(&self, d: F) -> bool {
        let th = F::from_f64(self.theta);
        match self.rule {
            DeltaRule::Magnitude => d.abs() >= th,
            DeltaRule::Signed => d >= th,
        }
    }
}

/// Thresholded change `H_{t-1} - H_{t-2}` and its nonzero count.
pub fn delta_encode<F: Scalar>(
    h_prev_1: &Tensor<F>,
    h_prev_2: &Tensor<F>,
    threshold: DeltaThreshold,
) -> Result<(Tensor<F>, usize)> {
    let (delta, _) = delta_with_mask(h_prev_1, h_prev_2, threshold)?;
    let nnz = delta.len() - delta.count_zeros();
    Ok((delta, nnz))
}

fn delta_with_mask<F: Scalar>(
    h1: &Tensor<F>,
    h2: &Tensor<F>,
    threshold: DeltaThreshold,
) -> Result<(Tensor<F>, Vec<bool>)> {
    h1.expect_same_shape(h2, "delta_encode")?;
    let mut mask = Vec::with_capacity(h1.len());
    let data = h1
        .data()
        .iter()
        .zip(h2.data())
        .map(|(&a, &b)| {
            let d = a - b;
            let keep = threshold.passes(d);
            mask.push(keep);
            if keep {
                d
            } else {
                F::zero()
            }
        })
        .collect();
    Ok((Tensor::from_vec(h1.shape(), data)?, mask))
}

/// Gate kernels for one layer, stacked `i, f, g, o` along the output axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams<F> {
    /// `[4h, in, k, k]` with bias `[4h]` (`b_i, b_f, b_g, b_o`).
    pub input: ConvKernel<F>,
    /// `[4h, h, k, k]`, no bias.
    pub hidden: ConvKernel<F>,
}

impl<F: Scalar> CellParams<F> {
    pub fn new(input: ConvKernel<F>, hidden: ConvKernel<F>) -> Result<Self> {
        let o = input.out_channels();
        if !o.is_multiple_of(4) || o == 0 {
            return Err(Error::shape("cell params", format!("input kernel has {o} outputs, need 4 * hidden")));
        }
        let h = o / 4;
        if hidden.out_channels() != o || hidden.in_channels() != h {
            return Err(Error::shape(
                "cell params",
                format!("hidden kernel is {:?}, expected [{o}, {h}, k, k]", hidden.weights.shape()),
            ));
        }
        if input.bias.is_none() || hidden.bias.is_some() {
            return Err(Error::shape("cell params", "bias belongs to the input path only"));
        }
        if input.kernel_size() != hidden.kernel_size() {
            return Err(Error::shape("cell params", "input and hidden kernels differ in size"));
        }
        Ok(Self { input, hidden })
    }

    pub fn zeros(in_ch: usize, hidden_ch: usize, k: usize) -> Self {
        Self {
            input: ConvKernel::zeros(4 * hidden_ch, in_ch, k, true),
            hidden: ConvKernel::zeros(4 * hidden_ch, hidden_ch, k, false),
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.input.out_channels() / 4
    }

    pub fn in_channels(&self) -> usize {
        self.input.in_channels()
    }

    pub fn kernel_size(&self) -> usize {
        self.input.kernel_size()
    }

    pub fn padding(&self) -> usize {
        self.kernel_size() / 2
    }

    pub fn param_count(&self) -> usize {
        self.input.param_count() + self.hidden.param_count()
    }

    pub fn prepare(&self) -> PreparedCell<F> {
        PreparedCell {
            input: self.input.prepare(),
            hidden: self.hidden.prepare(),
            hidden_ch: self.hidden_channels(),
            padding: self.padding(),
        }
    }
}

/// `H_t`, `C_t` and `H_{t-1}` for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<F> {
    pub h: Tensor<F>,
    pub c: Tensor<F>,
    pub h_prev: Tensor<F>,
}

impl<F: Scalar> CellState<F> {
    /// All-zero state; `shape` is `[C, H, W]` or `[B, C, H, W]`.
    pub fn zeros(shape: &[usize]) -> Self {
        Self { h: Tensor::zeros(shape), c: Tensor::zeros(shape), h_prev: Tensor::zeros(shape) }
    }
}

/// Gradient with respect to each component of a [`CellState`].
#[derive(Debug, Clone, PartialEq)]
pub struct CellStateGrad<F> {
    pub h: Tensor<F>,
    pub c: Tensor<F>,
    pub h_prev: Tensor<F>,
}

impl<F: Scalar> CellStateGrad<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { h: Tensor::zeros(shape), c: Tensor::zeros(shape), h_prev: Tensor::zeros(shape) }
    }
}

/// MACs charged by one step, split by operand path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellTally {
    pub input: MacCount,
    pub hidden: MacCount,
}

/// Forward values retained for the backward pass of one step.
#[derive(Debug, Clone)]
pub struct StepCache<F> {
    x: Tensor<F>,
    /// Operand of the hidden-path convolution.
    recurrent: Tensor<F>,
    /// Straight-through mask for the change-based operand.
    delta_mask: Option<Vec<bool>>,
    /// Post-activation gates, `[B, 4h, H, W]`.
    gates: Tensor<F>,
    c_prev: Tensor<F>,
    tanh_c: Tensor<F>,
}

impl<F: Scalar> StepCache<F> {
    pub fn recurrent_input(&self) -> &Tensor<F> {
        &self.recurrent
    }
}

/// Result of one cell step.
#[derive(Debug, Clone)]
pub struct StepOutput<F> {
    pub state: CellState<F>,
    /// Exact zeros in the recurrent operand.
    pub recurrent_zeros: usize,
    pub recurrent_len: usize,
    pub cache: Option<StepCache<F>>,
}

/// Parameter gradients of one cell.
#[derive(Debug, Clone)]
pub struct CellGrads<F> {
    pub input: ConvGrads<F>,
    pub hidden: ConvGrads<F>,
}

impl<F: Scalar> CellGrads<F> {
    pub fn add(&mut self, other: &Self) {
        self.input.add(&other.input);
        self.hidden.add(&other.hidden);
    }

    pub fn finish(&self) -> CellParams<F> {
        CellParams { input: self.input.finish(), hidden: self.hidden.finish() }
    }
}

/// A cell with its kernels laid out for the zero-skipping loops.
#[derive(Debug, Clone)]
pub struct PreparedCell<F> {
    input: PreparedConv<F>,
    hidden: PreparedConv<F>,
    hidden_ch: usize,
    padding: usize,
}

impl<F: Scalar> PreparedCell<F> {
    pub fn hidden_channels(&self) -> usize {
        self.hidden_ch
    }

    pub fn grads(&self) -> CellGrads<F> {
        CellGrads { input: self.input.grads(), hidden: self.hidden.grads() }
    }

    /// Advances the state by one step. `threshold` is used only by the
    /// change-based cell. With `keep_cache` the values needed by
    /// [`PreparedCell::backward`] are retained.
    pub fn step(
        &self,
        kind: CellKind,
        threshold: DeltaThreshold,
        x: &Tensor<F>,
        state: &CellState<F>,
        tally: &mut CellTally,
        keep_cache: bool,
    ) -> Result<StepOutput<F>> {
        let (b, _, hh, ww) = x.feature_dims()?;
        let hc = self.hidden_ch;
        let (sb, sc, sh, sw) = state.h.feature_dims()?;
        if (sb, sc, sh, sw) != (b, hc, hh, ww) || state.c.shape() != state.h.shape() {
            return Err(Error::shape(
                "cell step",
                format!("state {:?} does not fit input {:?} with {hc} hidden channels", state.h.shape(), x.shape()),
            ));
        }
        let (recurrent, delta_mask) = match kind {
            CellKind::Vanilla => (state.h.clone(), None),
            CellKind::ChangeBased => {
                let (d, m) = delta_with_mask(&state.h, &state.h_prev, threshold)?;
                (d, Some(m))
            }
        };
        let mut pre = self.input.forward(x, self.padding, &mut tally.input)?;
        let rec_out = self.hidden.forward(&recurrent, self.padding, &mut tally.hidden)?;
        pre.add_assign(&rec_out)?;

        let hw = hh * ww;
        let plane = hc * hw;
        let mut gates = pre;
        let mut h_new = Tensor::zeros(state.h.shape());
        let mut c_new = Tensor::zeros(state.h.shape());
        let mut tanh_c = Tensor::zeros(state.h.shape());
        {
            let gd = gates.data_mut();
            let cp = state.c.data();
            let (hn, cn, tc) = (h_new.data_mut(), c_new.data_mut(), tanh_c.data_mut());
            for s in 0..b {
                let g = &mut gd[s * 4 * plane..(s + 1) * 4 * plane];
                for p in 0..plane {
                    let i = sigmoid(g[p]);
                    let f = sigmoid(g[plane + p]);
                    let gg = g[2 * plane + p].tanh();
                    let o = sigmoid(g[3 * plane + p]);
                    g[p] = i;
                    g[plane + p] = f;
                    g[2 * plane + p] = gg;
                    g[3 * plane + p] = o;
                    let idx = s * plane + p;
                    let c = f * cp[idx] + i * gg;
                    let t = c.tanh();
                    cn[idx] = c;
                    tc[idx] = t;
                    hn[idx] = o * t;
                }
            }
        }
        h_new.ensure_finite("cell_step")?;
        c_new.ensure_finite("cell_step")?;
        let recurrent_zeros = recurrent.count_zeros();
        let recurrent_len = recurrent.len();
        let cache = keep_cache.then(|| StepCache {
            x: x.clone(),
            recurrent,
            delta_mask,
            gates,
            c_prev: state.c.clone(),
            tanh_c,
        });
        Ok(StepOutput {
            state: CellState { h: h_new, c: c_new, h_prev: state.h.clone() },
            recurrent_zeros,
            recurrent_len,
            cache,
        })
    }

    /// Backpropagates through one step.
    ///
    /// `grad_out` holds the gradient with respect to the step's output
    /// state; its `h` component must already include every consumer of
    /// `H_t`. Parameter gradients are accumulated into `grads`; the returned
    /// pair is the input gradient (when requested) and the gradient with
    /// respect to the incoming state. The change threshold is treated as a
    /// straight-through gate: gradient passes where the change survived and
    /// is zero where it was suppressed.
    pub fn backward(
        &self,
        cache: &StepCache<F>,
        grad_out: &CellStateGrad<F>,
        grads: &mut CellGrads<F>,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor<F>>, CellStateGrad<F>)> {
        let shape = cache.c_prev.shape().to_vec();
        grad_out.h.expect_same_shape(&cache.c_prev, "cell_backward")?;
        grad_out.c.expect_same_shape(&cache.c_prev, "cell_backward")?;
        let (b, hc, hh, ww) = cache.c_prev.feature_dims()?;
        let plane = hc * hh * ww;
        let mut d_pre = Tensor::zeros(cache.gates.shape());
        let mut d_c_prev = Tensor::zeros(&shape);
        {
            let g = cache.gates.data();
            let dp = d_pre.data_mut();
            let (dh, dc_in) = (grad_out.h.data(), grad_out.c.data());
            let (cp, tc) = (cache.c_prev.data(), cache.tanh_c.data());
            let dcp = d_c_prev.data_mut();
            for s in 0..b {
                let gs = &g[s * 4 * plane..(s + 1) * 4 * plane];
                let ds = &mut dp[s * 4 * plane..(s + 1) * 4 * plane];
                for p in 0..plane {
                    let idx = s * plane + p;
                    let (i, f, gg, o) = (gs[p], gs[plane + p], gs[2 * plane + p], gs[3 * plane + p]);
                    let t = tc[idx];
                    let d_o = dh[idx] * t;
                    let dc = dc_in[idx] + dh[idx] * o * tanh_grad_from_output(t);
                    ds[p] = dc * gg * sigmoid_grad_from_output(i);
                    ds[plane + p] = dc * cp[idx] * sigmoid_grad_from_output(f);
                    ds[2 * plane + p] = dc * i * tanh_grad_from_output(gg);
                    ds[3 * plane + p] = d_o * sigmoid_grad_from_output(o);
                    dcp[idx] = dc * f;
                }
            }
        }
        let d_x = self.input.backward(&cache.x, &d_pre, self.padding, &mut grads.input, need_input_grad)?;
        let d_rec = self
            .hidden
            .backward(&cache.recurrent, &d_pre, self.padding, &mut grads.hidden, true)?
            .expect("input gradient requested");

        // H_{t-1} feeds the recurrent operand and is copied into h_prev.
        let mut d_h = grad_out.h_prev.clone();
        let mut d_h_prev = Tensor::zeros(&shape);
        match &cache.delta_mask {
            None => d_h.add_assign(&d_rec)?,
            Some(mask) => {
                let (dh, dhp) = (d_h.data_mut(), d_h_prev.data_mut());
                for (k, (&g, &keep)) in d_rec.data().iter().zip(mask).enumerate() {
                    if keep {
                        dh[k] += g;
                        dhp[k] -= g;
                    }
                }
            }
        }
        Ok((d_x, CellStateGrad { h: d_h, c: d_c_prev, h_prev: d_h_prev }))
    }
}

/// One ConvLSTM step. Returns `H_t` and the next state.
pub fn convlstm_step<F: Scalar>(
    params: &CellParams<F>,
    x: &Tensor<F>,
    state: &CellState<F>,
    tally: &mut CellTally,
) -> Result<(Tensor<F>, CellState<F>)> {
    let out = params.prepare().step(CellKind::Vanilla, DeltaThreshold::default(), x, state, tally, false)?;
    Ok((out.state.h.clone(), out.state))
}

/// One change-based ConvLSTM step. Returns `H_t` and the next state.
pub fn cb_convlstm_step<F: Scalar>(
    params: &CellParams<F>,
    x: &Tensor<F>,
    state: &CellState<F>,
    threshold: DeltaThreshold,
    tally: &mut CellTally,
) -> Result<(Tensor<F>, CellState<F>)> {
    let out = params.prepare().step(CellKind::ChangeBased, threshold, x, state, tally, false)?;
    Ok((out.state.h.clone(), out.state))
}
