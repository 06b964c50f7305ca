use std::collections::BTreeMap;
use std::fmt;

/// Which operand stream a MAC count belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpPath {
    /// Convolution over the layer input `X_t`.
    Input,
    /// Convolution over the recurrent input (`H_{t-1}` or its thresholded change).
    Hidden,
    /// Fully connected layer.
    Fc,
}

impl OpPath {
    pub fn as_str(self) -> &'static str {
        match self {
            OpPath::Input => "input",
            OpPath::Hidden => "hidden",
            OpPath::Fc => "fc",
        }
    }
}

impl fmt::Display for OpPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpKey {
    pub layer: usize,
    pub path: OpPath,
}

impl OpKey {
    pub fn new(layer: usize, path: OpPath) -> Self {
        Self { layer, path }
    }
}

/// Dense vs. performed multiply-accumulates for one op site.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCount {
    pub dense: u64,
    pub effective: u64,
}

impl MacCount {
    pub fn add(&mut self, dense: u64, effective: u64) {
        debug_assert!(effective <= dense);
        self.dense += dense;
        self.effective += effective;
    }

    pub fn merge(&mut self, other: MacCount) {
        self.dense += other.dense;
        self.effective += other.effective;
    }

    /// Fraction of dense MACs that were skipped.
    pub fn skipped_fraction(&self) -> f64 {
        if self.dense == 0 {
            0.0
        } else {
            1.0 - self.effective as f64 / self.dense as f64
        }
    }
}

/// Per-site MAC accounting owned by one evaluation context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpsCounter {
    sites: BTreeMap<OpKey, MacCount>,
}

impl OpsCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn site(&mut self, key: OpKey) -> &mut MacCount {
        self.sites.entry(key).or_default()
    }

    pub fn get(&self, key: OpKey) -> MacCount {
        self.sites.get(&key).copied().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (OpKey, MacCount)> + '_ {
        self.sites.iter().map(|(k, v)| (*k, *v))
    }

    pub fn total(&self) -> MacCount {
        let mut t = MacCount::default();
        for c in self.sites.values() {
            t.merge(*c);
        }
        t
    }

    pub fn total_for(&self, pred: impl Fn(OpKey) -> bool) -> MacCount {
        let mut t = MacCount::default();
        for (k, c) in &self.sites {
            if pred(*k) {
                t.merge(*c);
            }
        }
        t
    }

    pub fn merge(&mut self, other: &OpsCounter) {
        for (k, c) in &other.sites {
            self.site(*k).merge(*c);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}
