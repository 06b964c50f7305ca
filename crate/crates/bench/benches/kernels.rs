use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use evtrack_bench::{cell, events, kernel, rng, sparse_tensor};
use evtrack_core::cells::{cb_convlstm_step, convlstm_step, CellState, CellTally, DeltaThreshold};
use evtrack_core::events::frame_events;
use evtrack_core::ops::{conv2d_dense, conv2d_forward, MacCount};

/// Second-layer hidden path of the default network: 16 -> 64 channels at 40x30.
fn conv(c: &mut Criterion) {
    let mut r = rng(1);
    let k = kernel(&mut r, 64, 16, false);
    let mut group = c.benchmark_group("conv_16x64_40x30");
    group.throughput(Throughput::Elements(9 * 16 * 64 * 40 * 30));
    for density in [1.0, 0.3, 0.1, 0.02] {
        let x = sparse_tensor(&mut r, &[1, 16, 30, 40], density);
        group.bench_with_input(BenchmarkId::new("zero_skip", density), &x, |b, x| {
            b.iter(|| conv2d_forward(x, &k, 1, &mut MacCount::default()).unwrap())
        });
    }
    let x = sparse_tensor(&mut r, &[1, 16, 30, 40], 1.0);
    group.bench_function("reference_loop", |b| b.iter(|| conv2d_dense(&x, &k, 1, &mut MacCount::default()).unwrap()));
    group.finish();
}

/// First-layer cell step of the default network: 1 -> 8 channels at 80x60.
fn cell_step(c: &mut Criterion) {
    let mut r = rng(2);
    let params = cell(&mut r, 1, 8);
    let x = sparse_tensor(&mut r, &[1, 60, 80], 0.05);
    let state = CellState {
        h: sparse_tensor(&mut r, &[8, 60, 80], 1.0),
        c: sparse_tensor(&mut r, &[8, 60, 80], 1.0),
        h_prev: sparse_tensor(&mut r, &[8, 60, 80], 1.0),
    };
    let mut group = c.benchmark_group("cell_step_1x8_80x60");
    group.bench_function("convlstm", |b| {
        b.iter(|| convlstm_step(&params, &x, &state, &mut CellTally::default()).unwrap())
    });
    for theta in [0.0, 0.5] {
        let th = DeltaThreshold::new(theta).unwrap();
        group.bench_with_input(BenchmarkId::new("cb_convlstm", theta), &th, |b, th| {
            b.iter(|| cb_convlstm_step(&params, &x, &state, *th, &mut CellTally::default()).unwrap())
        });
    }
    group.finish();
}

/// One second of events at roughly the synthetic generator's rate.
fn framing(c: &mut Criterion) {
    let ev = events(&mut rng(3), 200_000, 80, 60, 1_000_000);
    let mut group = c.benchmark_group("framing");
    group.throughput(Throughput::Elements(ev.len() as u64));
    group.bench_function("frame_events_200k", |b| b.iter(|| frame_events(&ev, 4400, 80, 60, 0).unwrap()));
    group.finish();
}

criterion_group!(benches, conv, cell_step, framing);
criterion_main!(benches);
