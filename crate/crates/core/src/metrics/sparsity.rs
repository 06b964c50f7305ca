//! Sparsity summaries and analytic MAC counts.
//!
//! A layer's input and hidden sparsity are element-weighted zero fractions
//! over every recorded timestep. "Total" sparsity combines operands weighted
//! by the dense MACs each one feeds, which makes
//! `effective = dense * (1 - total)` an identity under the per-operand MAC
//! convention of the convolution kernels. Network figures cover the
//! recurrent layers; the FC head is reported separately by the op counter.

use crate::error::{Error, Result};
use crate::metrics::trace::{OperandStats, SparsityTrace};
use crate::model::ModelConfig;
use crate::ops::conv::conv_dense_macs;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LayerSparsity {
    pub inp_sp: f64,
    pub hid_sp: f64,
    pub tot_sp: f64,
    pub input: OperandStats,
    pub hidden: OperandStats,
}

impl LayerSparsity {
    pub fn dense_macs(&self) -> u64 {
        self.input.dense_macs + self.hidden.dense_macs
    }

    /// MACs left after skipping zero operands.
    pub fn effective_macs(&self) -> f64 {
        self.dense_macs() as f64 * (1.0 - self.tot_sp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsitySummary {
    pub layers: Vec<LayerSparsity>,
    /// Element-weighted over all layers.
    pub inp_sp: f64,
    pub hid_sp: f64,
    /// MAC-weighted over all layers and both paths.
    pub tot_sp: f64,
    /// Unweighted means of the per-layer figures.
    pub inp_sp_layer_avg: f64,
    pub hid_sp_layer_avg: f64,
    pub tot_sp_layer_avg: f64,
    pub dense_macs: u64,
}

impl SparsitySummary {
    pub fn effective_macs(&self) -> f64 {
        self.dense_macs as f64 * (1.0 - self.tot_sp)
    }
}

fn mac_weighted(parts: &[OperandStats]) -> f64 {
    let dense: u64 = parts.iter().map(|p| p.dense_macs).sum();
    if dense == 0 {
        return 0.0;
    }
    parts.iter().map(|p| p.zero_fraction() * p.dense_macs as f64).sum::<f64>() / dense as f64
}

pub fn sparsity_summary(trace: &SparsityTrace) -> Result<SparsitySummary> {
    if trace.is_empty() {
        return Err(Error::Empty("sparsity trace"));
    }
    let n = trace.num_layers();
    let mut layers = Vec::with_capacity(n);
    let (mut all_in, mut all_hid) = (OperandStats::default(), OperandStats::default());
    let mut operands = Vec::with_capacity(2 * n);
    for l in 0..n {
        let tot = trace.layer_total(l);
        layers.push(LayerSparsity {
            inp_sp: tot.input.zero_fraction(),
            hid_sp: tot.hidden.zero_fraction(),
            tot_sp: mac_weighted(&[tot.input, tot.hidden]),
            input: tot.input,
            hidden: tot.hidden,
        });
        all_in.merge(tot.input);
        all_hid.merge(tot.hidden);
        operands.push(tot.input);
        operands.push(tot.hidden);
    }
    let avg = |f: fn(&LayerSparsity) -> f64| layers.iter().map(f).sum::<f64>() / n as f64;
    Ok(SparsitySummary {
        inp_sp: all_in.zero_fraction(),
        hid_sp: all_hid.zero_fraction(),
        tot_sp: mac_weighted(&operands),
        inp_sp_layer_avg: avg(|l| l.inp_sp),
        hid_sp_layer_avg: avg(|l| l.hid_sp),
        tot_sp_layer_avg: avg(|l| l.tot_sp),
        dense_macs: all_in.dense_macs + all_hid.dense_macs,
        layers,
    })
}

/// Analytic per-timestep MACs of one recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerMacs {
    pub input: u64,
    pub hidden: u64,
}

/// Analytic dense MACs of one timestep for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMacs {
    pub layers: Vec<LayerMacs>,
    pub fc1: u64,
    pub fc2: u64,
}

impl DenseMacs {
    pub fn conv_total(&self) -> u64 {
        self.layers.iter().map(|l| l.input + l.hidden).sum()
    }

    pub fn total(&self) -> u64 {
        self.conv_total() + self.fc1 + self.fc2
    }
}

/// Closed form: input path `k²·in·4h·H·W`, hidden path `k²·h·4h·H·W` at each
/// layer's resolution, and `in·out` per FC layer.
pub fn count_dense_macs(config: &ModelConfig) -> Result<DenseMacs> {
    config.validate()?;
    let res = config.layer_resolutions()?;
    let k = config.kernel;
    let layers = config
        .in_channels()
        .iter()
        .zip(&config.channels)
        .zip(&res)
        .map(|((&i, &h), &(rh, rw))| LayerMacs {
            input: conv_dense_macs(4 * h, i, k, rh, rw),
            hidden: conv_dense_macs(4 * h, h, k, rh, rw),
        })
        .collect();
    let flat = config.flat_len()? as u64;
    Ok(DenseMacs { layers, fc1: flat * config.fc_hidden as u64, fc2: (config.fc_hidden * config.outputs) as u64 })
}
