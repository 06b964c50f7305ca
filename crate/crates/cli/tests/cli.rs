//! End-to-end tests of the `evtrack` binary on small recordings.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn evtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evtrack")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = evtrack(args);
    assert!(out.status.success(), "evtrack {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A 2 s, 32x24 recording.
fn small_recording(dir: &Path, seed: &str) {
    ok(&["gen", "--seed", seed, "--duration-s", "2", "--width", "32", "--height", "24", "--out", p(dir)]);
}

const SMALL_MODEL: [&str; 4] = ["--channels", "2,4", "--fc-hidden", "8"];

fn manifest_value(dir: &Path, key: &str) -> String {
    let text = String::from_utf8(read(dir.join("manifest.txt"))).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("manifest has no {key}"))
}

#[test]
fn default_recording_has_expected_frame_count_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen", "--seed", "7", "--out", p(&a)]);
    ok(&["gen", "--seed", "7", "--out", p(&b)]);
    // 20 s at 4.4 ms per bin.
    assert_eq!(manifest_value(&a, "gen.frames"), "4545");
    for f in ["events.evt", "labels.csv", "meta.toml"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs between identical runs");
    }
    let c = tmp.path().join("c");
    ok(&["gen", "--seed", "8", "--out", p(&c)]);
    assert_ne!(read(a.join("events.evt")), read(c.join("events.evt")));
}

#[test]
fn existing_outputs_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("rec");
    small_recording(&d, "1");
    let again =
        evtrack(&["gen", "--seed", "1", "--duration-s", "2", "--width", "32", "--height", "24", "--out", p(&d)]);
    assert_eq!(again.status.code(), Some(2));
    ok(&["gen", "--seed", "1", "--duration-s", "2", "--width", "32", "--height", "24", "--out", p(&d), "--force"]);
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(evtrack(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(evtrack(&["--help"]).status.code(), Some(0));
    let missing = tmp.path().join("missing");
    let out = tmp.path().join("o");
    assert_eq!(evtrack(&["train", "--data", p(&missing), "--out", p(&out)]).status.code(), Some(3));
    let d = tmp.path().join("rec");
    small_recording(&d, "2");
    std::fs::write(d.join("events.evt"), b"not an event file").unwrap();
    assert_eq!(evtrack(&["train", "--data", p(&d), "--out", p(&out)]).status.code(), Some(3));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_evtrack"))
        .args(["count-ops"])
        .env("THREETET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn non_finite_training_exits_with_numerical_code() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("rec");
    small_recording(&d, "3");
    let out = tmp.path().join("t");
    let mut args = vec!["train", "--data", p(&d), "--out", p(&out), "--lr", "1e30", "--epochs", "2"];
    args.extend(["--seq-len", "4", "--batch", "2", "--max-clips-per-epoch", "4"]);
    args.extend(SMALL_MODEL);
    assert_eq!(evtrack(&args).status.code(), Some(4));
    assert!(out.join("train_report.csv").exists());
    assert!(!out.join("weights.bin").exists());
}

#[test]
fn zero_rate_training_matches_untrained_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("rec");
    small_recording(&d, "4");
    let (w0, w3) = (tmp.path().join("e0"), tmp.path().join("lr0"));
    let mut base = vec!["train", "--data", p(&d), "--seq-len", "4", "--batch", "2", "--max-clips-per-epoch", "4"];
    base.extend(SMALL_MODEL);
    let mut a = base.clone();
    a.extend(["--epochs", "0", "--out", p(&w0)]);
    ok(&a);
    let mut b = base.clone();
    b.extend(["--epochs", "3", "--lr", "0", "--out", p(&w3)]);
    ok(&b);
    assert_eq!(read(w0.join("weights.bin")), read(w3.join("weights.bin")));
    assert_eq!(String::from_utf8(read(w3.join("train_report.csv"))).unwrap().lines().count(), 4);
}

#[test]
fn default_flags_record_reference_hyperparameters() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("rec");
    small_recording(&d, "5");
    let out = tmp.path().join("t");
    ok(&["train", "--data", p(&d), "--epochs", "0", "--out", p(&out)]);
    assert_eq!(manifest_value(&out, "train.lr"), "0.001");
    assert_eq!(manifest_value(&out, "train.batch"), "16");
    assert_eq!(manifest_value(&out, "train.seq_len"), "40");
    assert_eq!(manifest_value(&out, "train.split"), "0.8");
    assert_eq!(manifest_value(&out, "model.channels"), "8,16,32,64");
    assert_eq!(manifest_value(&out, "model.cell"), "cb");
    assert!(manifest_value(&out, "finished_unix").parse::<f64>().is_ok());
}

#[test]
fn eval_and_sweeps_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("rec");
    small_recording(&d, "6");
    let t = tmp.path().join("t");
    let mut args = vec!["train", "--data", p(&d), "--out", p(&t), "--lr", "0.02", "--epochs", "1"];
    args.extend(["--seq-len", "5", "--batch", "2", "--max-clips-per-epoch", "6"]);
    args.extend(SMALL_MODEL);
    ok(&args);
    let w = t.join("weights.bin");

    let e = tmp.path().join("e");
    ok(&["eval", "--weights", p(&w), "--data", p(&d), "--out", p(&e)]);
    let metrics = String::from_utf8(read(e.join("metrics.csv"))).unwrap();
    assert!(metrics.starts_with("split,frames,mse,p3,p5,p10,inp_sp,hid_sp,tot_sp,"));
    let val_frames = 454 - (454.0f64 * 0.8).floor() as usize;
    assert!(metrics.lines().nth(1).unwrap().starts_with(&format!("val,{val_frames},")));
    let preds = String::from_utf8(read(e.join("predictions.csv"))).unwrap();
    assert_eq!(preds.lines().count(), val_frames + 1);

    let s = tmp.path().join("s");
    ok(&["sweep-theta", "--weights", p(&w), "--data", p(&d), "--out", p(&s)]);
    let theta = String::from_utf8(read(s.join("theta.csv"))).unwrap();
    let thetas: Vec<&str> = theta.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(thetas, ["0", "0.1", "0.2", "0.5"]);
    let layers = String::from_utf8(read(s.join("theta_layers.csv"))).unwrap();
    assert_eq!(layers.lines().count(), 1 + 4 * 2);

    let q = tmp.path().join("q");
    let mut sweep = vec!["sweep-seqlen", "--data", p(&d), "--out", p(&q), "--seq-lens", "2,5", "--epochs", "1"];
    sweep.extend(["--lr", "0.02", "--batch", "2", "--max-clips-per-epoch", "4"]);
    sweep.extend(SMALL_MODEL);
    ok(&sweep);
    let seqlen = String::from_utf8(read(q.join("seqlen.csv"))).unwrap();
    assert_eq!(seqlen.lines().count(), 3);
    assert!(q.join("train_report_t2.csv").exists() && q.join("train_report_t5.csv").exists());

    let c = tmp.path().join("c");
    ok(&["count-ops", "--width", "32", "--height", "24", "--channels", "2,4", "--fc-hidden", "8"]);
    let mut count = vec!["count-ops", "--width", "32", "--height", "24", "--out", p(&c)];
    count.extend(SMALL_MODEL);
    count.extend(["--weights", p(&w), "--data", p(&d), "--theta", "0.1"]);
    ok(&count);
    let ops = String::from_utf8(read(c.join("ops.csv"))).unwrap();
    assert!(ops.starts_with("layer,path,dense_macs,effective_macs,"));
}

#[test]
fn default_dense_count_matches_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tmp.path().join("c");
    ok(&["count-ops", "--out", p(&c)]);
    let table = String::from_utf8(read(c.join("dense_macs.csv"))).unwrap();
    let conv: u64 = table.lines().find_map(|l| l.strip_prefix("conv,total,")).unwrap().parse().unwrap();
    // Input path 9·in·4h·H·W plus hidden path 9·h·4h·H·W at 80x60, 40x30,
    // 20x15 and 10x7.
    let res = [(80u64, 60u64), (40, 30), (20, 15), (10, 7)];
    let chans = [(1u64, 8u64), (8, 16), (16, 32), (32, 64)];
    let expected: u64 = res.iter().zip(chans).map(|(&(w, h), (i, c))| 9 * (i + c) * 4 * c * w * h).sum();
    assert_eq!(conv, expected);
    assert!((conv as f64 / 1e6 - 61.1).abs() < 0.05);
    let doubled = evtrack(&["count-ops", "--flops-per-mac", "2"]);
    let text = String::from_utf8(doubled.stdout).unwrap();
    assert!(text.contains(&(2 * expected).to_string()));
    assert!(text.contains("parameters: 416882"));
}

#[test]
fn replay_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("rec");
    small_recording(&d, "9");
    let r = tmp.path().join("replayed");
    ok(&["replay", p(&d.join("manifest.txt")), "--out", p(&r)]);
    for f in ["events.evt", "labels.csv", "meta.toml"] {
        assert_eq!(read(d.join(f)), read(r.join(f)), "{f}");
    }
    assert_eq!(manifest_value(&r, "command"), "gen");
}
