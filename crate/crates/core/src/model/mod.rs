//! The pupil-tracking network.
//!
//! Every timestep runs the frame through a stack of recurrent convolutional
//! layers (cell step, batch norm on `H_t`, ReLU, 2x2 max pool), flattens the
//! last pooled map and regresses the pupil centre with FC → ReLU → FC. The
//! head works in coordinates normalized to `[0, 1]`; predictions are scaled
//! back to pixels at the configured resolution.

pub mod weights;

use rand::Rng;

use crate::cells::{
    CellGrads, CellKind, CellParams, CellState, CellStateGrad, CellTally, DeltaRule, DeltaThreshold, PreparedCell,
    StepCache,
};
use crate::error::{Error, Result};
use crate::events::{PupilCenter, SequenceSample, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::metrics::trace::{LayerStep, OperandStats, SparsityTrace};
use crate::ops::activation::{relu_backward, relu_tensor};
use crate::ops::batchnorm::{BatchNorm2d, BnCache, BnGrads, BnMode};
use crate::ops::conv::ConvKernel;
use crate::ops::counter::{OpKey, OpPath, OpsCounter};
use crate::ops::linear::{Linear, LinearGrads};
use crate::ops::pool::{maxpool2x2_backward, maxpool2x2_forward, pooled_size, PoolIndices};
use crate::rng::{stream_rng, SubSeed};
use crate::tensor::{Scalar, Tensor};

pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC};

pub const DEFAULT_CHANNELS: [usize; 4] = [8, 16, 32, 64];
pub const DEFAULT_SEQ_LEN: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    /// Hidden channels of each recurrent layer.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub fc_hidden: usize,
    pub outputs: usize,
    pub cell: CellKind,
    pub theta: f64,
    pub delta_rule: DeltaRule,
    pub seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH as usize,
            height: DEFAULT_HEIGHT as usize,
            channels: DEFAULT_CHANNELS.to_vec(),
            kernel: 3,
            fc_hidden: 128,
            outputs: 2,
            cell: CellKind::ChangeBased,
            theta: 0.0,
            delta_rule: DeltaRule::Magnitude,
            seq_len: DEFAULT_SEQ_LEN,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config(format!("channel plan {:?} must be non-empty and positive", self.channels)));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.fc_hidden == 0 || self.outputs == 0 {
            return Err(Error::Config("fc_hidden and outputs must be positive".into()));
        }
        if self.seq_len == 0 {
            return Err(Error::Config("sequence length must be >= 1".into()));
        }
        self.threshold()?;
        self.layer_resolutions()?;
        Ok(())
    }

    pub fn threshold(&self) -> Result<DeltaThreshold> {
        DeltaThreshold::with_rule(self.theta, self.delta_rule)
    }

    /// `(height, width)` at the input of each recurrent layer, plus the size
    /// after the final pool as the last entry.
    pub fn layer_resolutions(&self) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = (self.height, self.width);
        let mut out = vec![(h, w)];
        for (l, _) in self.channels.iter().enumerate() {
            if h < 2 || w < 2 {
                return Err(Error::Config(format!(
                    "{}x{} input collapses to {w}x{h} before pool {} of {}",
                    self.width,
                    self.height,
                    l + 1,
                    self.channels.len()
                )));
            }
            (h, w) = pooled_size(h, w);
            out.push((h, w));
        }
        if h == 0 || w == 0 {
            return Err(Error::Config(format!("{}x{} input pools down to nothing", self.width, self.height)));
        }
        Ok(out)
    }

    /// Length of the flattened feature vector feeding the first FC layer.
    pub fn flat_len(&self) -> Result<usize> {
        let res = self.layer_resolutions()?;
        let (h, w) = res[res.len() - 1];
        Ok(self.channels[self.channels.len() - 1] * h * w)
    }

    /// Input channels of each recurrent layer.
    pub fn in_channels(&self) -> Vec<usize> {
        std::iter::once(1).chain(self.channels.iter().copied()).take(self.channels.len()).collect()
    }

    /// Closed-form parameter count: per layer `4k²(in+h)h` gate weights,
    /// `4h` gate biases and `2h` batch-norm scales/shifts, plus both FC layers.
    pub fn param_count(&self) -> Result<usize> {
        let k2 = self.kernel * self.kernel;
        let layers: usize =
            self.in_channels().iter().zip(&self.channels).map(|(&i, &h)| 4 * k2 * (i + h) * h + 4 * h + 2 * h).sum();
        let flat = self.flat_len()?;
        Ok(layers + flat * self.fc_hidden + self.fc_hidden + self.fc_hidden * self.outputs + self.outputs)
    }

    /// Label in pixels → regression target in `[0, 1]`.
    pub fn normalize(&self, p: PupilCenter) -> [f64; 2] {
        [p.x / self.width as f64, p.y / self.height as f64]
    }

    /// Regression output → pixels.
    pub fn denormalize(&self, v: [f64; 2]) -> PupilCenter {
        PupilCenter::new(v[0] * self.width as f64, v[1] * self.height as f64)
    }
}

/// One recurrent layer and the batch norm that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub cell: CellParams<F>,
    pub bn: BatchNorm2d<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    config: ModelConfig,
    pub layers: Vec<Layer<F>>,
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

/// Which values a named model tensor holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    /// Updated by the optimizer.
    Param,
    /// Batch-norm running statistic.
    Buffer,
}

fn uniform_tensor<F: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::from_f64(rng.random_range(-bound..=bound)))
}

/// Builds a model with seeded initialization: every conv and FC weight is
/// uniform in `±1/sqrt(fan_in)`, the forget-gate bias is 1 and all other
/// biases are 0. Batch norm starts at identity with running mean 0 and
/// variance 1.
pub fn build_model<F: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<F>> {
    config.validate()?;
    let mut rng = stream_rng(seed, SubSeed::Init);
    let k = config.kernel;
    let mut layers = Vec::with_capacity(config.channels.len());
    for (&i, &h) in config.in_channels().iter().zip(&config.channels) {
        let wx = uniform_tensor(&mut rng, &[4 * h, i, k, k], 1.0 / ((i * k * k) as f64).sqrt());
        let wh = uniform_tensor(&mut rng, &[4 * h, h, k, k], 1.0 / ((h * k * k) as f64).sqrt());
        let mut bias = vec![F::zero(); 4 * h];
        bias[h..2 * h].fill(F::one());
        let cell = CellParams::new(ConvKernel::new(wx, Some(bias))?, ConvKernel::new(wh, None)?)?;
        layers.push(Layer { cell, bn: BatchNorm2d::with_default_stats(h) });
    }
    let flat = config.flat_len()?;
    let fc1 = Linear::new(
        uniform_tensor(&mut rng, &[config.fc_hidden, flat], 1.0 / (flat as f64).sqrt()),
        vec![F::zero(); config.fc_hidden],
    )?;
    let fc2 = Linear::new(
        uniform_tensor(&mut rng, &[config.outputs, config.fc_hidden], 1.0 / (config.fc_hidden as f64).sqrt()),
        vec![F::zero(); config.outputs],
    )?;
    Ok(Model { config: config.clone(), layers, fc1, fc2 })
}

/// Values retained per layer and timestep for the backward pass.
#[derive(Debug, Clone)]
struct LayerTape<F> {
    step: StepCache<F>,
    bn: BnCache<F>,
    bn_out: Tensor<F>,
    pool: PoolIndices,
}

#[derive(Debug, Clone)]
struct StepTape<F> {
    layers: Vec<LayerTape<F>>,
    flat: Tensor<F>,
    fc1_pre: Tensor<F>,
    fc1_out: Tensor<F>,
}

/// Everything a batched forward pass recorded for backpropagation.
#[derive(Debug, Clone)]
pub struct Tape<F> {
    cells: Vec<PreparedCell<F>>,
    steps: Vec<StepTape<F>>,
    state_shapes: Vec<Vec<usize>>,
}

impl<F> Tape<F> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Output of [`Model::forward_batch`].
#[derive(Debug, Clone)]
pub struct BatchOutput<F> {
    /// One `[B, outputs]` tensor per timestep, in normalized coordinates.
    pub outputs: Vec<Tensor<F>>,
    pub tape: Option<Tape<F>>,
}

/// Per-timestep predictions for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Pixel coordinates at the configured resolution, one per frame.
    pub predictions: Vec<PupilCenter>,
    pub trace: SparsityTrace,
}

/// Parameter gradients for a whole model.
#[derive(Debug, Clone)]
pub struct ModelGrads<F> {
    pub cells: Vec<CellGrads<F>>,
    pub bn: Vec<BnGrads<F>>,
    pub fc1: LinearGrads<F>,
    pub fc2: LinearGrads<F>,
}

impl<F: Scalar> ModelGrads<F> {
    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.add(b);
        }
        for (a, b) in self.bn.iter_mut().zip(&other.bn) {
            a.add(b);
        }
        self.fc1.add(&other.fc1);
        self.fc2.add(&other.fc2);
    }

    /// Flat gradients in the order [`Model::visit_params_mut`] visits
    /// trainable tensors.
    pub fn flatten(&self) -> Vec<Vec<F>> {
        let mut out = Vec::new();
        for (c, bn) in self.cells.iter().zip(&self.bn) {
            let p = c.finish();
            out.push(p.input.weights.into_data());
            out.push(p.input.bias.unwrap_or_default());
            out.push(p.hidden.weights.into_data());
            out.push(bn.gamma.clone());
            out.push(bn.beta.clone());
        }
        out.push(self.fc1.weights.data().to_vec());
        out.push(self.fc1.bias.clone());
        out.push(self.fc2.weights.data().to_vec());
        out.push(self.fc2.bias.clone());
        out
    }
}

/// Stacks timestep `t` of every clip into a `[B, 1, H, W]` tensor.
pub fn stack_frames<F: Scalar>(clips: &[SequenceSample<'_>]) -> Result<Vec<Tensor<F>>> {
    let Some(first) = clips.first() else {
        return Err(Error::Empty("clip batch"));
    };
    let t_len = first.len();
    if clips.iter().any(|c| c.len() != t_len) {
        return Err(Error::shape("stack_frames", "clips in a batch must have equal length"));
    }
    let (w, h) = (first.frames[0].width as usize, first.frames[0].height as usize);
    (0..t_len)
        .map(|t| {
            let mut data = Vec::with_capacity(clips.len() * w * h);
            for c in clips {
                let f = &c.frames[t];
                if (f.width as usize, f.height as usize) != (w, h) {
                    return Err(Error::shape("stack_frames", "frames differ in resolution"));
                }
                data.extend(f.counts.iter().map(|&v| F::from_f64(v as f64)));
            }
            Tensor::from_vec(&[clips.len(), 1, h, w], data)
        })
        .collect()
}

impl<F: Scalar> Model<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Switches the recurrence used at inference without touching weights.
    pub fn set_cell(&mut self, cell: CellKind) {
        self.config.cell = cell;
    }

    pub fn set_threshold(&mut self, threshold: DeltaThreshold) {
        self.config.theta = threshold.theta();
        self.config.delta_rule = threshold.rule;
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, role, data| {
            if role == TensorRole::Param {
                n += data.len();
            }
        });
        n
    }

    /// Visits every named tensor (parameters and running statistics) in
    /// serialization order.
    pub fn visit(&self, mut f: impl FnMut(&str, &[usize], TensorRole, &[F])) {
        for (l, layer) in self.layers.iter().enumerate() {
            let c = &layer.cell;
            f(&format!("layer{l}.wx"), c.input.weights.shape(), TensorRole::Param, c.input.weights.data());
            let bias = c.input.bias.as_deref().unwrap_or_default();
            f(&format!("layer{l}.bias"), &[bias.len()], TensorRole::Param, bias);
            f(&format!("layer{l}.wh"), c.hidden.weights.shape(), TensorRole::Param, c.hidden.weights.data());
            let n = layer.bn.channels();
            f(&format!("layer{l}.bn.gamma"), &[n], TensorRole::Param, &layer.bn.gamma);
            f(&format!("layer{l}.bn.beta"), &[n], TensorRole::Param, &layer.bn.beta);
            if let Some(rs) = &layer.bn.running {
                f(&format!("layer{l}.bn.running_mean"), &[n], TensorRole::Buffer, &rs.mean);
                f(&format!("layer{l}.bn.running_var"), &[n], TensorRole::Buffer, &rs.var);
            }
        }
        f("fc1.weight", self.fc1.weights.shape(), TensorRole::Param, self.fc1.weights.data());
        f("fc1.bias", &[self.fc1.bias.len()], TensorRole::Param, &self.fc1.bias);
        f("fc2.weight", self.fc2.weights.shape(), TensorRole::Param, self.fc2.weights.data());
        f("fc2.bias", &[self.fc2.bias.len()], TensorRole::Param, &self.fc2.bias);
    }

    /// Mutable form of [`Model::visit`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, TensorRole, &mut [F])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let c = &mut layer.cell;
            f(&format!("layer{l}.wx"), TensorRole::Param, c.input.weights.data_mut());
            f(&format!("layer{l}.bias"), TensorRole::Param, c.input.bias.as_deref_mut().unwrap_or_default());
            f(&format!("layer{l}.wh"), TensorRole::Param, c.hidden.weights.data_mut());
            f(&format!("layer{l}.bn.gamma"), TensorRole::Param, &mut layer.bn.gamma);
            f(&format!("layer{l}.bn.beta"), TensorRole::Param, &mut layer.bn.beta);
            if let Some(rs) = &mut layer.bn.running {
                f(&format!("layer{l}.bn.running_mean"), TensorRole::Buffer, &mut rs.mean);
                f(&format!("layer{l}.bn.running_var"), TensorRole::Buffer, &mut rs.var);
            }
        }
        f("fc1.weight", TensorRole::Param, self.fc1.weights.data_mut());
        f("fc1.bias", TensorRole::Param, &mut self.fc1.bias);
        f("fc2.weight", TensorRole::Param, self.fc2.weights.data_mut());
        f("fc2.bias", TensorRole::Param, &mut self.fc2.bias);
    }

    /// Visits trainable tensors only, in the order of [`ModelGrads::flatten`].
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, &mut [F])) {
        self.visit_mut(|name, role, data| {
            if role == TensorRole::Param {
                f(name, data)
            }
        });
    }

    pub fn prepare(&self) -> Vec<PreparedCell<F>> {
        self.layers.iter().map(|l| l.cell.prepare()).collect()
    }

    pub fn zero_grads(&self, cells: &[PreparedCell<F>]) -> ModelGrads<F> {
        ModelGrads {
            cells: cells.iter().map(PreparedCell::grads).collect(),
            bn: self.layers.iter().map(|l| BnGrads::zeros(l.bn.channels())).collect(),
            fc1: self.fc1.grads(),
            fc2: self.fc2.grads(),
        }
    }

    /// Runs a batch of equal-length clips. `inputs[t]` is `[B, 1, H, W]`.
    /// States start at zero. MACs are charged to `counter` under
    /// `(layer, path)`; the two FC layers use layer ids `L` and `L + 1`.
    pub fn forward_batch(
        &self,
        inputs: &[Tensor<F>],
        mode: BnMode,
        keep_tape: bool,
        counter: &mut OpsCounter,
        mut trace: Option<&mut SparsityTrace>,
    ) -> Result<BatchOutput<F>> {
        let cfg = &self.config;
        let threshold = cfg.threshold()?;
        let n_layers = self.layers.len();
        let Some(first) = inputs.first() else {
            return Err(Error::Empty("input sequence"));
        };
        let batch = first.shape()[0];
        let expect = [batch, 1, cfg.height, cfg.width];
        let res = cfg.layer_resolutions()?;
        let state_shapes: Vec<Vec<usize>> =
            cfg.channels.iter().zip(&res).map(|(&h, &(rh, rw))| vec![batch, h, rh, rw]).collect();
        let mut states: Vec<CellState<F>> = state_shapes.iter().map(|s| CellState::zeros(s)).collect();
        let cells = self.prepare();
        let flat_len = cfg.flat_len()?;
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(if keep_tape { inputs.len() } else { 0 });
        for (t, frame) in inputs.iter().enumerate() {
            if frame.shape() != expect {
                return Err(Error::shape(
                    "forward",
                    format!("timestep {t} input is {:?}, expected {expect:?}", frame.shape()),
                ));
            }
            let mut x = frame.clone();
            let mut layer_tapes = Vec::with_capacity(if keep_tape { n_layers } else { 0 });
            for (l, (layer, cell)) in self.layers.iter().zip(&cells).enumerate() {
                let mut tally = CellTally::default();
                let input_zeros = x.count_zeros() as u64;
                let out = cell.step(cfg.cell, threshold, &x, &states[l], &mut tally, keep_tape)?;
                counter.site(OpKey::new(l, OpPath::Input)).merge(tally.input);
                counter.site(OpKey::new(l, OpPath::Hidden)).merge(tally.hidden);
                if let Some(tr) = trace.as_deref_mut() {
                    tr.record(
                        t,
                        l,
                        LayerStep {
                            input: OperandStats::new(input_zeros, x.len() as u64, tally.input.dense),
                            hidden: OperandStats::new(
                                out.recurrent_zeros as u64,
                                out.recurrent_len as u64,
                                tally.hidden.dense,
                            ),
                        },
                    );
                }
                let (bn_out, bn_cache) = layer.bn.forward(&out.state.h, mode)?;
                let (pooled, pool) = maxpool2x2_forward(&relu_tensor(&bn_out))?;
                if keep_tape {
                    let step = out.cache.expect("cache requested");
                    layer_tapes.push(LayerTape { step, bn: bn_cache, bn_out, pool });
                }
                states[l] = out.state;
                x = pooled;
            }
            let flat = x.reshape(&[batch, flat_len])?;
            let fc1_pre = self.fc1.forward(&flat, counter.site(OpKey::new(n_layers, OpPath::Fc)))?;
            let fc1_out = relu_tensor(&fc1_pre);
            let y = self.fc2.forward(&fc1_out, counter.site(OpKey::new(n_layers + 1, OpPath::Fc)))?;
            outputs.push(y);
            if keep_tape {
                steps.push(StepTape { layers: layer_tapes, flat, fc1_pre, fc1_out });
            }
        }
        let tape = keep_tape.then_some(Tape { cells, steps, state_shapes });
        Ok(BatchOutput { outputs, tape })
    }

    /// Backpropagation through time. `grad_outputs[t]` is the loss gradient
    /// with respect to `outputs[t]` of the forward pass that built `tape`.
    pub fn backward(&self, tape: &Tape<F>, grad_outputs: &[Tensor<F>]) -> Result<ModelGrads<F>> {
        if grad_outputs.len() != tape.steps.len() {
            return Err(Error::shape(
                "backward",
                format!("{} output gradients for {} timesteps", grad_outputs.len(), tape.steps.len()),
            ));
        }
        let mut grads = self.zero_grads(&tape.cells);
        let n_layers = self.layers.len();
        let mut state_grads: Vec<CellStateGrad<F>> =
            tape.state_shapes.iter().map(|s| CellStateGrad::zeros(s)).collect();
        for (st, g_out) in tape.steps.iter().zip(grad_outputs).rev() {
            let g_fc1_out = self.fc2.backward(&st.fc1_out, g_out, &mut grads.fc2)?;
            let g_fc1_pre = relu_backward(&st.fc1_pre, &g_fc1_out)?;
            let g_flat = self.fc1.backward(&st.flat, &g_fc1_pre, &mut grads.fc1)?;
            let last = &st.layers[n_layers - 1].pool;
            let mut g_x = g_flat.reshape(&pooled_shape(last))?;
            for l in (0..n_layers).rev() {
                let lt = &st.layers[l];
                let g_relu = maxpool2x2_backward(&lt.pool, &g_x)?;
                let g_bn = relu_backward(&lt.bn_out, &g_relu)?;
                let mut g_h = self.layers[l].bn.backward(&lt.bn, &g_bn, &mut grads.bn[l])?;
                let carried = &state_grads[l];
                g_h.add_assign(&carried.h)?;
                let g_new = CellStateGrad { h: g_h, c: carried.c.clone(), h_prev: carried.h_prev.clone() };
                let (g_in, g_prev) = tape.cells[l].backward(&lt.step, &g_new, &mut grads.cells[l], l > 0)?;
                state_grads[l] = g_prev;
                if let Some(g) = g_in {
                    g_x = g;
                }
            }
        }
        Ok(grads)
    }

    /// Folds the batch statistics of every train-mode timestep into the
    /// batch-norm running estimates.
    pub fn update_running_stats(&mut self, tape: &Tape<F>) {
        for st in &tape.steps {
            for (layer, lt) in self.layers.iter_mut().zip(&st.layers) {
                layer.bn.update_running(&lt.bn);
            }
        }
    }

    /// Eval-mode predictions for a batch of equal-length clips, in pixels.
    pub fn predict_batch(
        &self,
        clips: &[SequenceSample<'_>],
        counter: &mut OpsCounter,
        trace: Option<&mut SparsityTrace>,
    ) -> Result<Vec<Vec<PupilCenter>>> {
        let inputs = stack_frames::<F>(clips)?;
        let out = self.forward_batch(&inputs, BnMode::Eval, false, counter, trace)?;
        let n_out = self.config.outputs;
        Ok((0..clips.len())
            .map(|b| {
                out.outputs
                    .iter()
                    .map(|y| {
                        let row = &y.data()[b * n_out..(b + 1) * n_out];
                        self.config.denormalize([row[0].as_f64(), row.get(1).map_or(0.0, |v| v.as_f64())])
                    })
                    .collect()
            })
            .collect())
    }

    /// Eval-mode predictions for any list of clips, batching runs of equal
    /// length. Results are identical to evaluating each clip alone.
    pub fn predict_clips(
        &self,
        clips: &[SequenceSample<'_>],
        batch: usize,
        counter: &mut OpsCounter,
        mut trace: Option<&mut SparsityTrace>,
    ) -> Result<Vec<Vec<PupilCenter>>> {
        let batch = batch.max(1);
        let mut out = Vec::with_capacity(clips.len());
        let mut i = 0;
        while i < clips.len() {
            let len = clips[i].len();
            let mut j = i + 1;
            while j < clips.len() && j - i < batch && clips[j].len() == len {
                j += 1;
            }
            out.extend(self.predict_batch(&clips[i..j], counter, trace.as_deref_mut())?);
            i = j;
        }
        Ok(out)
    }
}

fn pooled_shape(p: &PoolIndices) -> Vec<usize> {
    let mut s = p.input_shape().to_vec();
    let r = s.len();
    let (h, w) = pooled_size(s[r - 2], s[r - 1]);
    s[r - 2] = h;
    s[r - 1] = w;
    s
}

/// Runs one clip through the model in eval mode with zero initial state.
pub fn forward_sequence<F: Scalar>(
    model: &Model<F>,
    sample: &SequenceSample<'_>,
    counter: &mut OpsCounter,
) -> Result<ModelOutput> {
    let mut trace = SparsityTrace::new();
    let mut preds = model.predict_batch(std::slice::from_ref(sample), counter, Some(&mut trace))?;
    Ok(ModelOutput { predictions: preds.pop().unwrap_or_default(), trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::VoxelFrame;

    #[test]
    fn default_parameter_count() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.flat_len().unwrap(), 960);
        assert_eq!(cfg.param_count().unwrap(), 416_882);
        let m = build_model::<f32>(&cfg, 0).unwrap();
        assert_eq!(m.param_count(), 416_882);
    }

    #[test]
    fn small_resolution_shapes() {
        let cfg = ModelConfig { width: 40, height: 30, ..ModelConfig::default() };
        assert_eq!(cfg.flat_len().unwrap(), 128);
        let cfg = ModelConfig { width: 16, height: 12, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn seeded_init_repeats() {
        let cfg = ModelConfig::default();
        assert_eq!(build_model::<f32>(&cfg, 3).unwrap(), build_model::<f32>(&cfg, 3).unwrap());
        assert_ne!(build_model::<f32>(&cfg, 3).unwrap(), build_model::<f32>(&cfg, 4).unwrap());
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let m = build_model::<f64>(&ModelConfig::default(), 1).unwrap();
        let b = m.layers[0].cell.input.bias.as_ref().unwrap();
        assert!(b[..8].iter().all(|v| *v == 0.0));
        assert!(b[8..16].iter().all(|v| *v == 1.0));
        assert!(b[16..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn blank_input_gives_constant_predictions() {
        let cfg = ModelConfig { cell: CellKind::Vanilla, ..ModelConfig::default() };
        let m = build_model::<f64>(&cfg, 5).unwrap();
        let frames: Vec<_> = (0..4).map(|k| VoxelFrame::empty(80, 60, k, k + 1)).collect();
        let labels = vec![PupilCenter::default(); 4];
        let s = SequenceSample::new(&frames, &labels, 0).unwrap();
        let out = forward_sequence(&m, &s, &mut OpsCounter::new()).unwrap();
        assert_eq!(out.predictions.len(), 4);
        for p in &out.predictions[1..] {
            assert_eq!(*p, out.predictions[0]);
        }
    }
}
