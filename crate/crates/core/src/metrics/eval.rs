//! Evaluation runs and the threshold / sequence-length sweeps.

use rayon::prelude::*;

use crate::cells::{CellKind, DeltaThreshold};
use crate::error::{Error, Result};
use crate::events::{PupilCenter, SequenceSample};
use crate::metrics::detection::DetectionRates;
use crate::metrics::sparsity::{sparsity_summary, SparsitySummary};
use crate::metrics::trace::SparsityTrace;
use crate::model::{build_model, Model, ModelConfig};
use crate::ops::counter::{MacCount, OpPath, OpsCounter};
use crate::tensor::Scalar;
use crate::train::{split_streams, train, Stream, TrainConfig, TrainReport};

/// Predictions and instrumentation gathered from one batch of clips.
type BatchOutcome = (Vec<Vec<PupilCenter>>, OpsCounter, SparsityTrace);

/// Predictions, accuracy, sparsity and MAC accounting of one eval pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<PupilCenter>,
    pub labels: Vec<PupilCenter>,
    /// MSE in normalized coordinates.
    pub mse: f64,
    pub rates: DetectionRates,
    pub ops: OpsCounter,
    pub trace: SparsityTrace,
    /// Number of frames evaluated.
    pub frames: u64,
}

impl Evaluation {
    /// MACs of the recurrent layers (both paths).
    pub fn conv_macs(&self) -> MacCount {
        self.ops.total_for(|k| k.path != OpPath::Fc)
    }

    pub fn layer_macs(&self) -> Vec<MacCount> {
        let n = self.trace.num_layers();
        (0..n).map(|l| self.ops.total_for(|k| k.layer == l && k.path != OpPath::Fc)).collect()
    }

    pub fn summary(&self) -> Result<SparsitySummary> {
        sparsity_summary(&self.trace)
    }
}

/// Evaluates every frame of every clip once, in eval mode. Batches of
/// equal-length clips may run on parallel workers; results are gathered in
/// clip order, so the outcome does not depend on the worker count.
pub fn evaluate<F: Scalar>(
    model: &Model<F>,
    clips: &[SequenceSample<'_>],
    batch: usize,
    scale: f64,
) -> Result<Evaluation> {
    if clips.is_empty() {
        return Err(Error::Empty("evaluation clips"));
    }
    let batch = batch.max(1);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < clips.len() {
        let mut j = i + 1;
        while j < clips.len() && j - i < batch && clips[j].len() == clips[i].len() {
            j += 1;
        }
        groups.push(&clips[i..j]);
        i = j;
    }
    let parts: Vec<Result<BatchOutcome>> = groups
        .par_iter()
        .map(|g| {
            let mut ops = OpsCounter::new();
            let mut trace = SparsityTrace::new();
            let preds = model.predict_batch(g, &mut ops, Some(&mut trace))?;
            Ok((preds, ops, trace))
        })
        .collect();
    let mut predictions = Vec::new();
    let mut ops = OpsCounter::new();
    let mut trace = SparsityTrace::new();
    for part in parts {
        let (p, o, t) = part?;
        predictions.extend(p.into_iter().flatten());
        ops.merge(&o);
        trace.merge(&t);
    }
    let labels: Vec<PupilCenter> = clips.iter().flat_map(|c| c.labels.iter().copied()).collect();
    let cfg = model.config();
    let mut se = 0.0;
    for (p, l) in predictions.iter().zip(&labels) {
        let (a, b) = (cfg.normalize(*p), cfg.normalize(*l));
        se += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    }
    let mse = se / (2 * labels.len()) as f64;
    let rates = DetectionRates::compute(&predictions, &labels, scale)?;
    Ok(Evaluation { frames: labels.len() as u64, predictions, labels, mse, rates, ops, trace })
}

/// One row of a threshold sweep.
#[derive(Debug, Clone)]
pub struct ThetaRow {
    pub theta: f64,
    pub rates: DetectionRates,
    pub summary: SparsitySummary,
    /// Recurrent-layer MACs over the whole run.
    pub conv: MacCount,
    /// The same, per layer.
    pub layer_macs: Vec<MacCount>,
    pub frames: u64,
    /// Baseline effective MACs divided by this row's effective MACs.
    pub reduction: f64,
}

impl ThetaRow {
    pub fn dense_per_frame(&self) -> f64 {
        self.conv.dense as f64 / self.frames as f64
    }

    pub fn effective_per_frame(&self) -> f64 {
        self.conv.effective as f64 / self.frames as f64
    }
}

/// Evaluates the same weights as a change-based network at every threshold.
/// `baseline` supplies the reference effective MACs for the reduction
/// column; by default the same weights are run as a vanilla network.
pub fn sweep_theta<F: Scalar>(
    model: &Model<F>,
    clips: &[SequenceSample<'_>],
    thetas: &[f64],
    batch: usize,
    baseline: Option<MacCount>,
) -> Result<Vec<ThetaRow>> {
    let base = match baseline {
        Some(b) => b,
        None => {
            let mut vanilla = model.clone();
            vanilla.set_cell(CellKind::Vanilla);
            evaluate(&vanilla, clips, batch, 1.0)?.conv_macs()
        }
    };
    let rule = model.config().delta_rule;
    thetas
        .iter()
        .map(|&theta| {
            let mut m = model.clone();
            m.set_cell(CellKind::ChangeBased);
            m.set_threshold(DeltaThreshold::with_rule(theta, rule)?);
            let ev = evaluate(&m, clips, batch, 1.0)?;
            let conv = ev.conv_macs();
            Ok(ThetaRow {
                theta,
                rates: ev.rates,
                summary: ev.summary()?,
                conv,
                layer_macs: ev.layer_macs(),
                frames: ev.frames,
                reduction: base.effective as f64 / conv.effective.max(1) as f64,
            })
        })
        .collect()
}

/// One row of a sequence-length sweep.
#[derive(Debug, Clone)]
pub struct SeqLenRow {
    pub seq_len: usize,
    pub rates: DetectionRates,
    pub report: TrainReport,
}

/// Trains one model per sequence length with otherwise identical settings
/// and reports validation detection rates. Each model is scored on
/// non-overlapping clips of its own length, so every model sees the same
/// held-out frames but with as much temporal context as it was trained for.
pub fn sweep_sequence_length(
    streams: &[Stream],
    seq_lens: &[usize],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<Vec<SeqLenRow>> {
    if let Some(&t) = seq_lens.iter().find(|&&t| t < 2) {
        return Err(Error::Config(format!("sequence lengths must be >= 2, got {t}")));
    }
    if seq_lens.is_empty() {
        return Err(Error::Empty("sequence length list"));
    }
    seq_lens
        .iter()
        .map(|&seq_len| {
            let mc = ModelConfig { seq_len, ..model_config.clone() };
            let tc = TrainConfig { seq_len, ..train_config.clone() };
            let mut model = build_model::<f32>(&mc, tc.seed)?;
            let report = train(&mut model, streams, &tc)?;
            if let Some(reason) = &report.aborted {
                return Err(Error::Numerical(reason.clone()));
            }
            let val = split_streams(streams, seq_len, tc.split)?.val;
            let rates = evaluate(&model, &val, tc.batch_size, 1.0)?.rates;
            Ok(SeqLenRow { seq_len, rates, report })
        })
        .collect()
}
