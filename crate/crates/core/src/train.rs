//! MSE loss, plain SGD, BPTT over whole clips, and the gradient check.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::cells::DeltaThreshold;
use crate::error::{Error, Result};
use crate::events::{slice_clips, tile_clips, PupilCenter, Recording, SequenceSample, VoxelFrame};
use crate::metrics::eval::evaluate;
use crate::model::{stack_frames, Model, ModelConfig, ModelGrads};
use crate::ops::batchnorm::BnMode;
use crate::ops::counter::OpsCounter;
use crate::rng::{stream_rng, SubSeed};
use crate::tensor::{Scalar, Tensor};

/// Gradients plus the forward tape of one training batch.
type Backward<F> = (ModelGrads<F>, crate::model::Tape<F>);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Fraction of each stream (from its start) used for training.
    pub split: f64,
    /// Change threshold active during training (change-based cells only).
    pub train_theta: f64,
    pub seed: u64,
    /// Optional cap on training clips drawn per epoch, after shuffling.
    pub max_clips_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            epochs: 30,
            batch_size: 16,
            seq_len: 40,
            split: 0.8,
            train_theta: 0.0,
            seed: 0,
            max_clips_per_epoch: None,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` and `epochs = 0` are accepted; they are useful for
    /// reproducibility checks.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::Config("batch size and sequence length must be >= 1".into()));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if !(self.train_theta >= 0.0 && self.train_theta.is_finite()) {
            return Err(Error::Config(format!("training threshold must be >= 0, got {}", self.train_theta)));
        }
        if self.max_clips_per_epoch == Some(0) {
            return Err(Error::Config("max clips per epoch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Frames and labels of one recording, ready for clip slicing.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub frames: Vec<VoxelFrame>,
    pub labels: Vec<PupilCenter>,
}

impl Stream {
    pub fn from_recording(rec: &Recording) -> Result<Self> {
        rec.validate()?;
        Ok(Self { frames: rec.frames()?, labels: rec.labels.clone() })
    }

    /// Number of leading frames assigned to training.
    pub fn train_len(&self, split: f64) -> usize {
        (self.frames.len() as f64 * split).floor() as usize
    }
}

/// Clips of every stream after the contiguous per-stream split.
#[derive(Debug, Clone)]
pub struct Split<'a> {
    /// Overlapping stride-1 clips inside each training region.
    pub train: Vec<SequenceSample<'a>>,
    /// Non-overlapping clips covering each validation region exactly once.
    pub val: Vec<SequenceSample<'a>>,
    /// Non-overlapping clips covering each training region exactly once.
    pub train_tiles: Vec<SequenceSample<'a>>,
}

pub fn split_streams(streams: &[Stream], seq_len: usize, split: f64) -> Result<Split<'_>> {
    let mut out = Split { train: Vec::new(), val: Vec::new(), train_tiles: Vec::new() };
    for s in streams {
        let n_train = s.train_len(split);
        let (tf, vf) = s.frames.split_at(n_train);
        let (tl, vl) = s.labels.split_at(n_train);
        out.train.extend(slice_clips(tf, tl, seq_len, 1)?);
        out.train_tiles.extend(tile_clips(tf, tl, seq_len, 0)?);
        out.val.extend(tile_clips(vf, vl, seq_len, n_train)?);
    }
    Ok(out)
}

/// Mean squared error over all terms, and its gradient.
pub fn mse_loss<F: Scalar>(pred: &[F], target: &[F]) -> Result<(f64, Vec<F>)> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse_loss", format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse_loss input"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = (p - t).as_f64();
            loss += d * d;
            F::from_f64(2.0 * d / n)
        })
        .collect();
    Ok((loss / n, grad))
}

/// `w <- w - lr * g` on one flat tensor.
pub fn sgd_update<F: Scalar>(weights: &mut [F], grads: &[F], lr: f64) -> Result<()> {
    if weights.len() != grads.len() {
        return Err(Error::shape("sgd_step", format!("{} weights, {} gradients", weights.len(), grads.len())));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let lr = F::from_f64(lr);
    for (w, &g) in weights.iter_mut().zip(grads) {
        *w -= lr * g;
    }
    Ok(())
}

/// Plain SGD over every trainable tensor. Nothing is updated when any
/// gradient is non-finite.
pub fn sgd_step<F: Scalar>(model: &mut Model<F>, grads: &ModelGrads<F>, lr: f64) -> Result<()> {
    let flat = grads.flatten();
    if flat.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let mut i = 0;
    let mut res = Ok(());
    model.visit_params_mut(|_, w| {
        if res.is_ok() {
            res = sgd_update(w, &flat[i], lr);
        }
        i += 1;
    });
    res
}

/// Regression targets per timestep, `[B, 2]` in normalized coordinates.
pub fn stack_targets<F: Scalar>(clips: &[SequenceSample<'_>], config: &ModelConfig) -> Result<Vec<Tensor<F>>> {
    let t_len = clips.first().ok_or(Error::Empty("clip batch"))?.len();
    (0..t_len)
        .map(|t| {
            let data = clips.iter().flat_map(|c| config.normalize(c.labels[t])).map(F::from_f64).collect();
            Tensor::from_vec(&[clips.len(), 2], data)
        })
        .collect()
}

/// Mean loss over every timestep of every clip in a batch, with train-mode
/// batch norm. Returns the loss and, with `want_grads`, the gradients and
/// the tape needed to update running statistics.
pub fn batch_loss<F: Scalar>(
    model: &Model<F>,
    inputs: &[Tensor<F>],
    targets: &[Tensor<F>],
    want_grads: bool,
) -> Result<(f64, Option<Backward<F>>)> {
    let out = model.forward_batch(inputs, BnMode::Train, want_grads, &mut OpsCounter::new(), None)?;
    let pred: Vec<F> = out.outputs.iter().flat_map(|y| y.data().iter().copied()).collect();
    let tgt: Vec<F> = targets.iter().flat_map(|y| y.data().iter().copied()).collect();
    let (loss, grad) = mse_loss(&pred, &tgt)?;
    if !want_grads {
        return Ok((loss, None));
    }
    let mut grad_outputs = Vec::with_capacity(targets.len());
    let mut off = 0;
    for y in &out.outputs {
        grad_outputs.push(Tensor::from_vec(y.shape(), grad[off..off + y.len()].to_vec())?);
        off += y.len();
    }
    let tape = out.tape.expect("tape requested");
    let grads = model.backward(&tape, &grad_outputs)?;
    Ok((loss, Some((grads, tape))))
}

/// One SGD step on one batch. Returns the batch loss before the update.
/// With `lr = 0` the model is left untouched, running statistics included,
/// so a zero-rate run reproduces the initial weight file exactly.
pub fn train_batch<F: Scalar>(model: &mut Model<F>, clips: &[SequenceSample<'_>], lr: f64) -> Result<f64> {
    let inputs = stack_frames::<F>(clips)?;
    let targets = stack_targets::<F>(clips, model.config())?;
    let (loss, gt) = batch_loss(model, &inputs, &targets, true)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss became {loss}")));
    }
    let (grads, tape) = gt.expect("gradients requested");
    if lr > 0.0 {
        sgd_step(model, &grads, lr)?;
        model.update_running_stats(&tape);
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub p3: f64,
    pub p5: f64,
    pub p10: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Set when the NaN guard stopped training.
    pub aborted: Option<String>,
}

pub const REPORT_HEADER: &str = "epoch,train_loss,val_loss,p3,p5,p10,seconds";

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.p3, e.p5, e.p10, e.seconds
            ));
        }
        s
    }
}

/// Trains in place. Clips come from a contiguous per-stream split; each
/// epoch shuffles the training clips with the seeded shuffle stream and
/// steps through them in batches, then evaluates the validation tiles.
/// The NaN guard stops training and records the reason in the report.
pub fn train<F: Scalar>(model: &mut Model<F>, streams: &[Stream], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let split = split_streams(streams, config.seq_len, config.split)?;
    if split.train.is_empty() {
        return Err(Error::Empty("training clips"));
    }
    let eval_threshold = model.config().threshold()?;
    let train_threshold = DeltaThreshold::with_rule(config.train_theta, eval_threshold.rule)?;
    let mut rng = stream_rng(config.seed, SubSeed::Shuffle);
    let mut report = TrainReport::default();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut rng);
        if let Some(cap) = config.max_clips_per_epoch {
            order.truncate(cap);
        }
        model.set_threshold(train_threshold);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut failure = None;
        for chunk in order.chunks(config.batch_size) {
            let clips: Vec<SequenceSample<'_>> = chunk.iter().map(|&i| split.train[i]).collect();
            match train_batch(model, &clips, config.lr) {
                Ok(l) => {
                    loss_sum += l * clips.len() as f64;
                    seen += clips.len();
                }
                Err(e) if e.is_numerical() => {
                    failure = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        model.set_threshold(eval_threshold);
        if let Some(reason) = failure {
            log::warn!("epoch {epoch}: NaN guard stopped training: {reason}");
            report.aborted = Some(format!("epoch {epoch}: {reason}"));
            break;
        }
        let (val_loss, p3, p5, p10) = if split.val.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let ev = evaluate(model, &split.val, config.batch_size, 1.0)?;
            (ev.mse, ev.rates.p3, ev.rates.p5, ev.rates.p10)
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            p3,
            p5,
            p10,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} p3 {:.3} p5 {:.3} p10 {:.3} ({:.1}s)",
            rec.train_loss,
            rec.val_loss,
            rec.p3,
            rec.p5,
            rec.p10,
            rec.seconds
        );
        report.epochs.push(rec);
    }
    Ok(report)
}

/// Finite-difference comparison for one trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    /// Largest `|analytic - fd| / max(|fd|, 1e-8)` over checked entries.
    pub max_rel_err: f64,
    pub worst: usize,
}

/// Compares analytic gradients of the batch loss against central
/// differences with step `eps`, for every entry of every trainable tensor.
pub fn gradient_check(model: &Model<f64>, clips: &[SequenceSample<'_>], eps: f64) -> Result<Vec<GradCheck>> {
    let inputs = stack_frames::<f64>(clips)?;
    let targets = stack_targets::<f64>(clips, model.config())?;
    let (_, gt) = batch_loss(model, &inputs, &targets, true)?;
    let analytic = gt.expect("gradients requested").0.flatten();
    let mut names = Vec::new();
    let mut probe = model.clone();
    probe.visit_params_mut(|name, _| names.push(name.to_string()));
    let mut out = Vec::with_capacity(names.len());
    for (ti, name) in names.iter().enumerate() {
        let mut check = GradCheck { name: name.clone(), checked: 0, max_rel_err: 0.0, worst: 0 };
        for k in 0..analytic[ti].len() {
            let loss_at = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                let mut i = 0;
                m.visit_params_mut(|_, w| {
                    if i == ti {
                        w[k] += delta;
                    }
                    i += 1;
                });
                Ok(batch_loss(&m, &inputs, &targets, false)?.0)
            };
            let fd = (loss_at(eps)? - loss_at(-eps)?) / (2.0 * eps);
            let rel = (analytic[ti][k] - fd).abs() / fd.abs().max(1e-8);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst = k;
            }
            check.checked += 1;
        }
        out.push(check);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn mse_examples() {
        let (l, g) = mse_loss(&[0.3f64, 0.7], &[0.3, 0.7]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let (l, g) = mse_loss(&[1.0f64, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, vec![1.0, 0.0]);
    }

    #[test]
    fn sgd_examples() {
        let mut w = [1.0f64];
        sgd_update(&mut w, &[2.0], 0.001).unwrap();
        assert_eq!(w[0], 0.998);
        let mut w = [1.0f64, -3.0];
        sgd_update(&mut w, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(w, [1.0, -3.0]);
        assert!(matches!(sgd_update(&mut w, &[f64::NAN, 0.0], 0.1), Err(Error::Numerical(_))));
        assert_eq!(w, [1.0, -3.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: 0.0, epochs: 0, ..TrainConfig::default() }.validate().is_ok());
        assert!(TrainConfig { split: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = ModelConfig { width: 16, height: 12, channels: vec![2, 2], fc_hidden: 4, ..ModelConfig::default() };
        let mut m = build_model::<f32>(&cfg, 0).unwrap();
        let s = Stream { frames: vec![], labels: vec![] };
        assert!(matches!(train(&mut m, &[s], &TrainConfig::default()), Err(Error::Empty(_))));
    }
}
