//! Seeded inputs shared by the benchmarks.

use evtrack_core::cells::CellParams;
use evtrack_core::events::{Event, Polarity};
use evtrack_core::ops::ConvKernel;
use evtrack_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values in `[-1, 1]` with a `density` fraction of non-zeros.
pub fn sparse_tensor(rng: &mut ChaCha8Rng, shape: &[usize], density: f64) -> Tensor<f32> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| if rng.random_bool(density) { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

pub fn kernel(rng: &mut ChaCha8Rng, out_ch: usize, in_ch: usize, bias: bool) -> ConvKernel<f32> {
    let w = sparse_tensor(rng, &[out_ch, in_ch, 3, 3], 1.0);
    let b = bias.then(|| (0..out_ch).map(|_| rng.random_range(-0.1..0.1)).collect());
    ConvKernel::new(w, b).expect("valid kernel")
}

pub fn cell(rng: &mut ChaCha8Rng, in_ch: usize, hidden: usize) -> CellParams<f32> {
    CellParams::new(kernel(rng, 4 * hidden, in_ch, true), kernel(rng, 4 * hidden, hidden, false)).expect("valid cell")
}

/// `n` time-sorted events on a `width x height` sensor within `span_us`.
pub fn events(rng: &mut ChaCha8Rng, n: usize, width: u16, height: u16, span_us: u64) -> Vec<Event> {
    let mut ev: Vec<Event> = (0..n)
        .map(|_| {
            let p = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
            Event::new(rng.random_range(0..width), rng.random_range(0..height), rng.random_range(1..=span_us), p)
        })
        .collect();
    ev.sort_by_key(|e| e.t);
    ev
}
