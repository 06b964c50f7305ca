//! Per-layer, per-timestep zero counts of the operands feeding each
//! convolution path.

/// Zero count, element count and dense MACs of one operand tensor (summed
/// over every sample and clip that was recorded).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OperandStats {
    pub zeros: u64,
    pub len: u64,
    /// Dense MACs of the convolution this operand feeds.
    pub dense_macs: u64,
}

impl OperandStats {
    pub fn new(zeros: u64, len: u64, dense_macs: u64) -> Self {
        Self { zeros, len, dense_macs }
    }

    pub fn merge(&mut self, other: OperandStats) {
        self.zeros += other.zeros;
        self.len += other.len;
        self.dense_macs += other.dense_macs;
    }

    /// Fraction of exact zeros; 0 for an empty record.
    pub fn zero_fraction(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.zeros as f64 / self.len as f64
        }
    }
}

/// Operand statistics of one recurrent layer at one timestep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerStep {
    /// The layer input `X_t`.
    pub input: OperandStats,
    /// The recurrent operand: `H_{t-1}` or its thresholded change.
    pub hidden: OperandStats,
}

impl LayerStep {
    pub fn merge(&mut self, other: LayerStep) {
        self.input.merge(other.input);
        self.hidden.merge(other.hidden);
    }
}

/// `steps[t][layer]`, accumulated over every recorded clip.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparsityTrace {
    steps: Vec<Vec<LayerStep>>,
}

impl SparsityTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, t: usize, layer: usize, step: LayerStep) {
        if self.steps.len() <= t {
            self.steps.resize_with(t + 1, Vec::new);
        }
        let row = &mut self.steps[t];
        if row.len() <= layer {
            row.resize(layer + 1, LayerStep::default());
        }
        row[layer].merge(step);
    }

    pub fn merge(&mut self, other: &SparsityTrace) {
        for (t, row) in other.steps.iter().enumerate() {
            for (l, s) in row.iter().enumerate() {
                self.record(t, l, *s);
            }
        }
    }

    pub fn steps(&self) -> &[Vec<LayerStep>] {
        &self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.steps.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Totals over all timesteps for one layer.
    pub fn layer_total(&self, layer: usize) -> LayerStep {
        let mut acc = LayerStep::default();
        for row in &self.steps {
            if let Some(s) = row.get(layer) {
                acc.merge(*s);
            }
        }
        acc
    }
}
