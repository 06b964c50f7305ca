//! Acceptance suite: prints one PASS/FAIL line per criterion and a summary
//! count of failures. The verdicts are reported, not enforced, so the rest
//! of `cargo test` still runs; set `EVTRACK_ACCEPTANCE_STRICT=1` to exit
//! non-zero when any criterion fails.
//!
//! The training criteria (5-7) share three models trained on one
//! seed-pinned synthetic recording: a vanilla ConvLSTM and a change-based
//! ConvLSTM at T=40, and a change-based ConvLSTM at T=2. Training runs on a
//! random subset of clips per epoch with a raised learning rate so that
//! each run fits its time budget on a single CPU core; see the README.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use evtrack_core::cells::{cb_convlstm_step, convlstm_step, CellKind, CellState, CellTally, DeltaRule, DeltaThreshold};
use evtrack_core::events::synth::seeded;
use evtrack_core::events::{
    generate_synthetic_stream, Event, Framing, Polarity, PupilCenter, Recording, SequenceSample, VoxelFrame,
};
use evtrack_core::metrics::{count_dense_macs, evaluate, sweep_theta, Evaluation};
use evtrack_core::model::{build_model, forward_sequence, Model, ModelConfig};
use evtrack_core::ops::{conv2d_forward, MacCount, OpKey, OpPath, OpsCounter};
use evtrack_core::train::{gradient_check, split_streams, train, Stream, TrainConfig};
use evtrack_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed of the synthetic recording used by the training criteria.
const DATA_SEED: u64 = 0;
const DURATION_US: u64 = 20_000_000;
const EPOCHS: usize = 10;
const LR: f64 = 0.05;
const BATCH: usize = 4;
const CLIPS_PER_EPOCH: usize = 160;
const EVAL_BATCH: usize = 16;
const THETAS: [f64; 4] = [0.0, 0.1, 0.2, 0.5];

type Outcome = Result<String, String>;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, started: Instant, outcome: Outcome) {
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id} [{tag}] {name}: {detail} ({secs:.1}s)");
        std::io::stdout().flush().ok();
    }
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(started: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = started.elapsed();
    if took <= limit {
        Ok(())
    } else {
        Err(format!("{what} took {:.1}s, over the {:.0}s budget", took.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).expect("consistent shape")
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut conv_err, mut lstm_err, mut cb_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        // Zero-skipping convolution, batched, with odd kernels up to 5.
        let (b, c, o) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=6));
        let (h, w) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let k = [1, 3, 5][rng.random_range(0..3)];
        let zero_prob = rng.random_range(0.0..0.98);
        let x = sparse_vec(&mut rng, b * c * h * w, zero_prob, 2.0);
        let with_bias = rng.random_bool(0.5);
        let kernel = random_kernel(&mut rng, o, c, k, with_bias);
        let y = conv2d_forward(&tensor(&[b, c, h, w], x.clone()), &kernel, k / 2, &mut MacCount::default())
            .map_err(|e| e.to_string())?;
        for s in 0..b {
            let want = ref_conv(
                &x[s * c * h * w..(s + 1) * c * h * w],
                c,
                h,
                w,
                kernel.weights.data(),
                kernel.bias.as_deref(),
                o,
                k,
            );
            conv_err = conv_err.max(max_abs_diff(&y.data()[s * o * h * w..(s + 1) * o * h * w], &want));
        }

        // One step of each cell from a random state.
        let (inp, hid) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (rows, cols) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let params = random_cell(&mut rng, inp, hid, 3);
        let n = hid * rows * cols;
        let hs = sparse_vec(&mut rng, n, 0.0, 1.0);
        let cs = sparse_vec(&mut rng, n, 0.0, 2.0);
        let hp = sparse_vec(&mut rng, n, 0.2, 1.0);
        let zero_frac = rng.random_range(0.0..0.9);
        let xv = sparse_vec(&mut rng, inp * rows * cols, zero_frac, 3.0);
        let state = CellState {
            h: tensor(&[hid, rows, cols], hs.clone()),
            c: tensor(&[hid, rows, cols], cs.clone()),
            h_prev: tensor(&[hid, rows, cols], hp.clone()),
        };
        let xt = tensor(&[inp, rows, cols], xv.clone());

        let (got_h, got) = convlstm_step(&params, &xt, &state, &mut CellTally::default()).map_err(|e| e.to_string())?;
        let (want_h, want_c) = ref_cell_step(&params, &xv, &hs, &cs, &hp, None, rows, cols);
        lstm_err = lstm_err.max(max_abs_diff(got_h.data(), &want_h)).max(max_abs_diff(got.c.data(), &want_c));

        let theta = rng.random_range(0.0..0.6);
        let rule = if rng.random_bool(0.5) { DeltaRule::Magnitude } else { DeltaRule::Signed };
        let th = DeltaThreshold::with_rule(theta, rule).map_err(|e| e.to_string())?;
        let (got_h, got) =
            cb_convlstm_step(&params, &xt, &state, th, &mut CellTally::default()).map_err(|e| e.to_string())?;
        let (want_h, want_c) = ref_cell_step(&params, &xv, &hs, &cs, &hp, Some((theta, rule)), rows, cols);
        cb_err = cb_err.max(max_abs_diff(got_h.data(), &want_h)).max(max_abs_diff(got.c.data(), &want_c));
    }
    within(started, Duration::from_secs(60), "100 configurations")?;
    let worst = conv_err.max(lstm_err).max(cb_err);
    check(
        worst <= 1e-12,
        format!("max abs error conv {conv_err:.1e}, ConvLSTM {lstm_err:.1e}, CB-ConvLSTM {cb_err:.1e} over 100 configurations"),
    )
}

fn random_frames(rng: &mut ChaCha8Rng, n: usize, w: u16, h: u16) -> (Vec<VoxelFrame>, Vec<PupilCenter>) {
    let frames = (0..n)
        .map(|k| {
            let mut f = VoxelFrame::empty(w, h, k as u64 * 10, k as u64 * 10 + 10);
            for c in f.counts.iter_mut() {
                if rng.random_bool(0.35) {
                    *c = rng.random_range(-3..=3);
                }
            }
            f
        })
        .collect();
    let labels =
        (0..n).map(|_| PupilCenter::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64))).collect();
    (frames, labels)
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (frames, labels) = random_frames(&mut rng, 6, 8, 6);
    let clips = [
        SequenceSample::new(&frames[..3], &labels[..3], 0).map_err(|e| e.to_string())?,
        SequenceSample::new(&frames[3..], &labels[3..], 3).map_err(|e| e.to_string())?,
    ];
    let mut worst = (0.0f64, String::new());
    let mut tensors = 0;
    for cell in [CellKind::Vanilla, CellKind::ChangeBased] {
        let cfg = ModelConfig {
            width: 8,
            height: 6,
            channels: vec![2, 4],
            fc_hidden: 8,
            cell,
            theta: 0.0,
            seq_len: 3,
            ..ModelConfig::default()
        };
        let model = build_model::<f64>(&cfg, 7).map_err(|e| e.to_string())?;
        for c in gradient_check(&model, &clips, 1e-5).map_err(|e| e.to_string())? {
            tensors += 1;
            if c.max_rel_err >= worst.0 {
                worst = (c.max_rel_err, format!("{cell}/{}", c.name));
            }
        }
    }
    within(started, Duration::from_secs(300), "gradient suite")?;
    check(worst.0 < 1e-4, format!("{tensors} tensors checked, worst rel err {:.2e} ({})", worst.0, worst.1))
}

fn parameter_count() -> Outcome {
    let cfg = ModelConfig::default();
    let analytic = cfg.param_count().map_err(|e| e.to_string())?;
    let built = build_model::<f32>(&cfg, 0).map_err(|e| e.to_string())?.param_count();
    check(analytic == 416_882 && built == 416_882, format!("analytic {analytic}, instantiated {built}"))
}

fn dense_mac_accounting() -> Outcome {
    let cfg = ModelConfig { seq_len: 2, cell: CellKind::Vanilla, ..ModelConfig::default() };
    let model = build_model::<f32>(&cfg, 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (frames, labels) = random_frames(&mut rng, 2, 80, 60);
    let clip = SequenceSample::new(&frames, &labels, 0).map_err(|e| e.to_string())?;
    let mut ops = OpsCounter::new();
    forward_sequence(&model, &clip, &mut ops).map_err(|e| e.to_string())?;
    let closed = count_dense_macs(&cfg).map_err(|e| e.to_string())?;
    // Independent closed form: 9·(in + h)·4h MACs per output pixel.
    let dims = [(80u64, 60u64, 1u64, 8u64), (40, 30, 8, 16), (20, 15, 16, 32), (10, 7, 32, 64)];
    let by_hand: u64 = dims.iter().map(|&(w, h, i, c)| 9 * (i + c) * 4 * c * w * h).sum();
    let mut mismatches = Vec::new();
    for (l, m) in closed.layers.iter().enumerate() {
        for (path, want) in [(OpPath::Input, m.input), (OpPath::Hidden, m.hidden)] {
            let got = ops.get(OpKey::new(l, path)).dense;
            if got != 2 * want {
                mismatches.push(format!("layer {} {path}: {got} vs {}", l + 1, 2 * want));
            }
        }
    }
    let conv = closed.conv_total();
    let m = conv as f64 / 1e6;
    check(
        mismatches.is_empty() && conv == by_hand && (m - 61.1).abs() < 0.05,
        format!(
            "conv total {conv} MACs/timestep ({m:.2}M), counters {}",
            if mismatches.is_empty() { "match".to_string() } else { mismatches.join("; ") }
        ),
    )
}

fn evtrack(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_evtrack"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("THREETET_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("evtrack {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path, threads: &str) -> Result<(), String> {
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_string();
    let (data, model, eval) = (root.join("data"), root.join("model"), root.join("eval"));
    evtrack(&["gen", "--seed", "11", "--duration-s", "3", "--out", &s(&data)], threads)?;
    evtrack(
        &[
            "train",
            "--data",
            &s(&data),
            "--out",
            &s(&model),
            "--channels",
            "4,8",
            "--fc-hidden",
            "16",
            "--seq-len",
            "8",
            "--epochs",
            "2",
            "--batch",
            "4",
            "--lr",
            "0.02",
            "--max-clips-per-epoch",
            "16",
            "--seed",
            "3",
        ],
        threads,
    )?;
    evtrack(
        &[
            "eval",
            "--weights",
            &s(&model.join("weights.bin")),
            "--data",
            &s(&data),
            "--out",
            &s(&eval),
            "--theta",
            "0.1",
        ],
        threads,
    )
}

/// The report's wall-clock column is the one field that legitimately varies.
fn without_seconds(csv: &[u8]) -> String {
    String::from_utf8_lossy(csv)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(a, _)| a))
        .collect::<Vec<_>>()
        .join("\n")
}

fn pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a, "1")?;
    pipeline(&b, "2")?;
    let files = [
        "data/events.evt",
        "data/labels.csv",
        "data/meta.toml",
        "model/weights.bin",
        "eval/metrics.csv",
        "eval/ops.csv",
        "eval/predictions.csv",
    ];
    let mut differing = Vec::new();
    for f in files {
        let (x, y) = (
            std::fs::read(a.join(f)).map_err(|e| e.to_string())?,
            std::fs::read(b.join(f)).map_err(|e| e.to_string())?,
        );
        if x != y {
            differing.push(f);
        }
    }
    let report = |d: &Path| std::fs::read(d.join("model/train_report.csv")).map(|r| without_seconds(&r));
    if report(&a).map_err(|e| e.to_string())? != report(&b).map_err(|e| e.to_string())? {
        differing.push("model/train_report.csv");
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two runs (1 and 2 worker threads)", files.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn framing_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut total_events = 0usize;
    for case in 0..1000 {
        let (w, h) = (rng.random_range(1..=16u16), rng.random_range(1..=12u16));
        let t0 = rng.random_range(0..1000u64);
        let dt = rng.random_range(1..=3000u64);
        let n = rng.random_range(0..400);
        let mut events: Vec<Event> = (0..n)
            .map(|_| {
                let p = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
                Event::new(rng.random_range(0..w), rng.random_range(0..h), t0 + rng.random_range(1..50_000u64), p)
            })
            .collect();
        events.sort_by_key(|e| e.t);
        total_events += events.len();
        let frames = evtrack_core::events::frame_events(&events, dt, w, h, t0).map_err(|e| e.to_string())?;
        let mass: i64 = events.iter().map(|e| e.p.sign() as i64).sum();
        let framed: i64 = frames.iter().map(VoxelFrame::signed_mass).sum();
        if mass != framed {
            return Err(format!("stream {case}: event mass {mass}, framed mass {framed}"));
        }
        let mut rebuilt: Vec<Vec<i32>> = frames.iter().map(|f| vec![0; f.counts.len()]).collect();
        for e in &events {
            let owners: Vec<usize> =
                frames.iter().enumerate().filter(|(_, f)| f.t_start < e.t && e.t <= f.t_end).map(|(k, _)| k).collect();
            if owners.len() != 1 {
                return Err(format!("stream {case}: event at t={} falls in {} bins", e.t, owners.len()));
            }
            rebuilt[owners[0]][e.y as usize * w as usize + e.x as usize] += e.p.sign();
        }
        if frames.iter().zip(&rebuilt).any(|(f, r)| &f.counts != r) {
            return Err(format!("stream {case}: frame contents differ from per-event assignment"));
        }
    }
    Ok(format!("1000 streams, {total_events} events: mass conserved, one bin per event"))
}

/// A model trained on the shared recording, with its training time.
struct Trained {
    model: Model<f32>,
    seconds: f64,
    report: String,
}

fn train_one(stream: &Stream, cell: CellKind, seq_len: usize) -> Result<Trained, String> {
    let started = Instant::now();
    let mc = ModelConfig { cell, seq_len, ..ModelConfig::default() };
    let tc = TrainConfig {
        lr: LR,
        epochs: EPOCHS,
        batch_size: BATCH,
        seq_len,
        max_clips_per_epoch: Some(CLIPS_PER_EPOCH),
        ..TrainConfig::default()
    };
    let mut model = build_model::<f32>(&mc, tc.seed).map_err(|e| e.to_string())?;
    let report = train(&mut model, std::slice::from_ref(stream), &tc).map_err(|e| e.to_string())?;
    if let Some(reason) = report.aborted {
        return Err(format!("{cell} T={seq_len} training stopped: {reason}"));
    }
    let last = report
        .epochs
        .last()
        .map_or(String::new(), |e| format!("final val p3 {:.3} p5 {:.3} p10 {:.3}", e.p3, e.p5, e.p10));
    eprintln!("trained {cell} T={seq_len} in {:.0}s: {last}", started.elapsed().as_secs_f64());
    Ok(Trained { model, seconds: started.elapsed().as_secs_f64(), report: last })
}

fn val_clips(stream: &Stream, seq_len: usize) -> Result<Vec<SequenceSample<'_>>, String> {
    Ok(split_streams(std::slice::from_ref(stream), seq_len, 0.8).map_err(|e| e.to_string())?.val)
}

fn run_training_criteria(report: &mut Report) {
    let started = Instant::now();
    let setup = (|| -> Result<Stream, String> {
        let stream = generate_synthetic_stream(&seeded(DATA_SEED), DURATION_US).map_err(|e| e.to_string())?;
        let rec = Recording::from_synthetic(&stream, Framing::default(), DURATION_US, DATA_SEED)
            .map_err(|e| e.to_string())?;
        Stream::from_recording(&rec).map_err(|e| e.to_string())
    })();
    let stream = match setup {
        Ok(s) => s,
        Err(e) => {
            for (id, name) in [(5, "theta monotonicity"), (6, "efficiency trend"), (7, "sequence-length trend")] {
                report.record(id, name, started, Err(format!("synthetic data: {e}")));
            }
            return;
        }
    };
    eprintln!("synthetic recording: {} frames", stream.frames.len());

    let vanilla = train_one(&stream, CellKind::Vanilla, 40);
    let cb = train_one(&stream, CellKind::ChangeBased, 40);

    // Criterion 5: threshold sweep of the trained change-based model. The
    // vanilla model's effective MACs serve as the reduction baseline, which
    // criterion 6 reuses.
    let started = Instant::now();
    let val40 = match val_clips(&stream, 40) {
        Ok(v) => v,
        Err(e) => {
            report.record(5, "theta monotonicity", started, Err(e));
            return;
        }
    };
    let vanilla_eval: Result<Evaluation, String> = vanilla
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|v| evaluate(&v.model, &val40, EVAL_BATCH, 1.0).map_err(|e| e.to_string()));
    let post_training = Instant::now();
    let sweep = match (&cb, &vanilla_eval) {
        (Ok(cb), Ok(v)) => {
            sweep_theta(&cb.model, &val40, &THETAS, EVAL_BATCH, Some(v.conv_macs())).map_err(|e| e.to_string())
        }
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    let sweep_secs = post_training.elapsed();
    let outcome = sweep.as_ref().map_err(Clone::clone).and_then(|rows| {
        let hid: Vec<f64> = rows.iter().map(|r| r.summary.hid_sp).collect();
        let eff: Vec<u64> = rows.iter().map(|r| r.conv.effective).collect();
        let monotone = hid.windows(2).all(|w| w[1] >= w[0]) && eff.windows(2).all(|w| w[1] <= w[0]);
        let detail = format!(
            "theta {THETAS:?}: hidden sparsity {:?}, effective MACs/frame {:?}",
            hid.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            rows.iter().map(|r| format!("{:.2}M", r.effective_per_frame() / 1e6)).collect::<Vec<_>>()
        );
        if sweep_secs > Duration::from_secs(60) {
            return Err(format!("{detail}; sweep took {:.0}s, over the 60s budget", sweep_secs.as_secs_f64()));
        }
        check(monotone, detail)
    });
    report.record(5, "theta monotonicity", started, outcome);

    // Criterion 6: CB-ConvLSTM at theta = 0.5 against the vanilla model.
    let started = Instant::now();
    let outcome = (|| -> Outcome {
        let (v, c) = (vanilla.as_ref().map_err(Clone::clone)?, cb.as_ref().map_err(Clone::clone)?);
        let v_eval = vanilla_eval.as_ref().map_err(Clone::clone)?;
        let rows = sweep.as_ref().map_err(Clone::clone)?;
        let at = rows.iter().find(|r| r.theta == 0.5).ok_or("no theta = 0.5 row")?;
        let dp5 = (at.rates.p5 - v_eval.rates.p5) * 100.0;
        let budget = v.seconds.max(c.seconds);
        let detail = format!(
            "reduction {:.2}x ({:.2}M -> {:.2}M effective MACs/frame), p5 vanilla {:.3} vs CB {:.3} (delta {dp5:+.1}pp), training {:.0}s / {:.0}s",
            at.reduction,
            v_eval.conv_macs().effective as f64 / v_eval.frames as f64 / 1e6,
            at.effective_per_frame() / 1e6,
            v_eval.rates.p5,
            at.rates.p5,
            v.seconds,
            c.seconds
        );
        check(at.reduction >= 2.0 && dp5.abs() <= 2.0 && budget <= 1800.0, detail)
    })();
    report.record(6, "efficiency trend", started, outcome);

    // Criterion 7: the change-based model at T=40 against one trained on
    // two-frame clips, each scored on validation clips of its own length.
    let started = Instant::now();
    let outcome = (|| -> Outcome {
        let long = cb.as_ref().map_err(Clone::clone)?;
        let short = train_one(&stream, CellKind::ChangeBased, 2)?;
        let p3_long =
            sweep.as_ref().map_err(Clone::clone)?.iter().find(|r| r.theta == 0.0).ok_or("no theta = 0 row")?.rates.p3;
        let val2 = val_clips(&stream, 2)?;
        let p3_short = evaluate(&short.model, &val2, EVAL_BATCH, 1.0).map_err(|e| e.to_string())?.rates.p3;
        let total = long.seconds + short.seconds;
        check(
            p3_long > p3_short && total <= 2700.0,
            format!(
                "p3 T=40 {p3_long:.3} vs T=2 {p3_short:.3}; training {total:.0}s for both ({} / {})",
                long.report, short.report
            ),
        )
    })();
    report.record(7, "sequence-length trend", started, outcome);
}

/// A criterion that needs no trained model: id, name and check.
type QuickCriterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut report = Report { failures: 0 };
    let quick: [QuickCriterion; 6] = [
        (1, "oracle equivalence", oracle_equivalence),
        (2, "gradient suite", gradient_suite),
        (3, "parameter count", parameter_count),
        (4, "dense MAC accounting", dense_mac_accounting),
        (8, "pipeline determinism", pipeline_determinism),
        (9, "framing conservation", framing_conservation),
    ];
    for (id, name, f) in quick {
        let started = Instant::now();
        report.record(id, name, started, f());
    }
    run_training_criteria(&mut report);
    println!("acceptance: {} of 9 criteria failed", report.failures);
    let strict = std::env::var("EVTRACK_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && report.failures > 0 {
        std::process::exit(1);
    }
}
