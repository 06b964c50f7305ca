//! Scalar-loop reference implementations and random fixtures shared by the
//! integration tests. Everything here is written directly from the
//! definitions, with no code shared with the library kernels.

#![allow(dead_code)]

use evtrack_core::cells::{CellParams, DeltaRule};
use evtrack_core::ops::ConvKernel;
use evtrack_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Same-padded cross-correlation over `[c][h][w]`, one output at a time.
#[allow(clippy::too_many_arguments)]
pub fn ref_conv(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: Option<&[f64]>,
    o: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; o * h * w];
    for oc in 0..o {
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = bias.map_or(0.0, |b| b[oc]);
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = oy as isize + ky as isize - pad;
                            let x = ox as isize + kx as isize - pad;
                            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                continue;
                            }
                            let v = input[(ic * h + y as usize) * w + x as usize];
                            acc += weights[((oc * c + ic) * k + ky) * k + kx] * v;
                        }
                    }
                }
                out[(oc * h + oy) * w + ox] = acc;
            }
        }
    }
    out
}

fn sigm(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One ConvLSTM (or change-based ConvLSTM) step for a single sample.
/// Returns `(H_t, C_t)`.
#[allow(clippy::too_many_arguments)]
pub fn ref_cell_step(
    params: &CellParams<f64>,
    x: &[f64],
    h: &[f64],
    c: &[f64],
    h_prev: &[f64],
    change_based: Option<(f64, DeltaRule)>,
    rows: usize,
    cols: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hid = params.hidden_channels();
    let inp = params.in_channels();
    let k = params.kernel_size();
    let recurrent: Vec<f64> = match change_based {
        None => h.to_vec(),
        Some((theta, rule)) => h
            .iter()
            .zip(h_prev)
            .map(|(&a, &b)| {
                let d = a - b;
                let keep = match rule {
                    DeltaRule::Magnitude => d.abs() >= theta,
                    DeltaRule::Signed => d >= theta,
                };
                if keep {
                    d
                } else {
                    0.0
                }
            })
            .collect(),
    };
    let zx = ref_conv(x, inp, rows, cols, params.input.weights.data(), params.input.bias.as_deref(), 4 * hid, k);
    let zh = ref_conv(&recurrent, hid, rows, cols, params.hidden.weights.data(), None, 4 * hid, k);
    let plane = hid * rows * cols;
    let mut h_new = vec![0.0; plane];
    let mut c_new = vec![0.0; plane];
    for p in 0..plane {
        let z = |g: usize| zx[g * plane + p] + zh[g * plane + p];
        let (i, f, g, o) = (sigm(z(0)), sigm(z(1)), z(2).tanh(), sigm(z(3)));
        c_new[p] = f * c[p] + i * g;
        h_new[p] = o * c_new[p].tanh();
    }
    (h_new, c_new)
}

/// Uniform values in `[-scale, scale]`, with each entry zeroed with
/// probability `zero_prob`.
pub fn sparse_vec(rng: &mut ChaCha8Rng, n: usize, zero_prob: f64, scale: f64) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(zero_prob) { 0.0 } else { rng.random_range(-scale..=scale) }).collect()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, o: usize, i: usize, k: usize, bias: bool) -> ConvKernel<f64> {
    let w = Tensor::from_vec(&[o, i, k, k], sparse_vec(rng, o * i * k * k, 0.0, 1.0)).unwrap();
    let b = bias.then(|| sparse_vec(rng, o, 0.0, 1.0));
    ConvKernel::new(w, b).unwrap()
}

pub fn random_cell(rng: &mut ChaCha8Rng, inp: usize, hid: usize, k: usize) -> CellParams<f64> {
    CellParams::new(random_kernel(rng, 4 * hid, inp, k, true), random_kernel(rng, 4 * hid, hid, k, false)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
