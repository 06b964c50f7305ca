//! Detection rate, sparsity statistics, operation accounting and sweeps.

pub mod detection;
pub mod eval;
pub mod report;
pub mod sparsity;
pub mod trace;

pub use detection::{detection_rate, detection_rate_scaled, DetectionRates, DETECTION_THRESHOLDS};
pub use eval::{evaluate, sweep_sequence_length, sweep_theta, Evaluation, SeqLenRow, ThetaRow};
pub use sparsity::{count_dense_macs, sparsity_summary, DenseMacs, LayerMacs, LayerSparsity, SparsitySummary};
pub use trace::{LayerStep, OperandStats, SparsityTrace};
