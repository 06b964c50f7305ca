//! Event-camera pupil tracking with ConvLSTM and change-based ConvLSTM cells.
//!
//! The crate covers the whole pipeline: framing DVS events into signed
//! voxel frames, the recurrent cells and network, BPTT training, and
//! instrumentation that counts dense versus actually performed MACs so the
//! sparsity gained by delta-encoding the hidden path can be measured.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cells;
pub mod error;
pub mod events;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
