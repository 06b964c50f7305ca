//! Training-loop behaviour on small synthetic tasks.

use evtrack_core::events::synth::seeded;
use evtrack_core::events::{generate_synthetic_stream, Framing, Motion, Recording, SyntheticSceneConfig};
use evtrack_core::model::{build_model, write_weights, ModelConfig};
use evtrack_core::train::{split_streams, train, Stream, TrainConfig};

fn small_scene(motion: Motion, seed: u64) -> SyntheticSceneConfig {
    SyntheticSceneConfig { width: 32, height: 24, pupil_radius: (3.0, 4.0), motion, ..seeded(seed) }
}

fn stream_of(scene: &SyntheticSceneConfig, duration_us: u64) -> Stream {
    let s = generate_synthetic_stream(scene, duration_us).unwrap();
    let framing = Framing { width: scene.width, height: scene.height, ..Framing::default() };
    Stream::from_recording(&Recording::from_synthetic(&s, framing, duration_us, scene.seed).unwrap()).unwrap()
}

fn small_model(seq_len: usize) -> ModelConfig {
    ModelConfig { width: 32, height: 24, channels: vec![4, 8], fc_hidden: 16, seq_len, ..ModelConfig::default() }
}

fn natural_stream() -> Stream {
    stream_of(&small_scene(Motion::Natural(Default::default()), 21), 2_000_000)
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let stream = natural_stream();
    let cfg = small_model(6);
    let mut model = build_model::<f32>(&cfg, 4).unwrap();
    let before = write_weights(&model);
    let tc = TrainConfig {
        lr: 0.0,
        epochs: 1,
        seq_len: 6,
        batch_size: 4,
        max_clips_per_epoch: Some(16),
        ..TrainConfig::default()
    };
    let report = train(&mut model, std::slice::from_ref(&stream), &tc).unwrap();
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(write_weights(&model), before, "a zero-rate run must not change any state");
}

#[test]
fn constant_centre_is_learned_within_five_epochs() {
    let scene = small_scene(Motion::Static { center: (9.0, 16.0) }, 5);
    let stream = stream_of(&scene, 1_000_000);
    let cfg = small_model(4);
    let mut model = build_model::<f32>(&cfg, 1).unwrap();
    let tc = TrainConfig {
        lr: 0.05,
        epochs: 5,
        seq_len: 4,
        batch_size: 4,
        max_clips_per_epoch: Some(64),
        ..TrainConfig::default()
    };
    let report = train(&mut model, std::slice::from_ref(&stream), &tc).unwrap();
    assert!(report.aborted.is_none());
    let last = report.epochs.last().unwrap();
    assert_eq!(last.p10, 1.0, "{}", report.to_csv());
}

#[test]
fn identical_runs_give_identical_reports_and_weights() {
    let stream = natural_stream();
    let cfg = small_model(5);
    let tc = TrainConfig {
        lr: 0.02,
        epochs: 2,
        seq_len: 5,
        batch_size: 3,
        max_clips_per_epoch: Some(12),
        seed: 8,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = build_model::<f32>(&cfg, tc.seed).unwrap();
        let r = train(&mut m, std::slice::from_ref(&stream), &tc).unwrap();
        (r, write_weights(&m))
    };
    let (ra, wa) = run();
    let (rb, wb) = run();
    assert_eq!(wa, wb);
    assert_eq!(ra.epochs.len(), rb.epochs.len());
    for (a, b) in ra.epochs.iter().zip(&rb.epochs) {
        assert_eq!((a.train_loss, a.val_loss, a.p3, a.p5, a.p10), (b.train_loss, b.val_loss, b.p3, b.p5, b.p10));
    }
}

#[test]
fn no_validation_frame_appears_in_a_training_clip() {
    let streams = vec![natural_stream(), stream_of(&small_scene(Motion::Natural(Default::default()), 22), 1_500_000)];
    for seq_len in [1, 2, 7, 40] {
        let split = split_streams(&streams, seq_len, 0.8).unwrap();
        let boundaries: Vec<usize> = streams.iter().map(|s| s.train_len(0.8)).collect();
        // Training clips index frames from their stream's start; validation
        // tiles carry the absolute index.
        assert!(split.train.iter().all(|c| c.span().end <= boundaries[0].max(boundaries[1])));
        for s in &streams {
            let n = s.train_len(0.8);
            let train = split_streams(std::slice::from_ref(s), seq_len, 0.8).unwrap();
            assert!(train.train.iter().all(|c| c.span().end <= n));
            assert!(train.val.iter().all(|c| c.start >= n));
            let covered: usize = train.val.iter().map(|c| c.len()).sum();
            assert_eq!(covered, s.frames.len() - n);
        }
    }
}

#[test]
fn training_loss_falls_on_the_synthetic_task() {
    let stream = natural_stream();
    let cfg = small_model(6);
    let mut model = build_model::<f32>(&cfg, 2).unwrap();
    let tc = TrainConfig {
        lr: 0.05,
        epochs: 10,
        seq_len: 6,
        batch_size: 4,
        max_clips_per_epoch: Some(32),
        ..TrainConfig::default()
    };
    let report = train(&mut model, std::slice::from_ref(&stream), &tc).unwrap();
    let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_loss).collect();
    let median = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(median(&losses[5..]) < median(&losses[..5]), "{losses:?}");
}
