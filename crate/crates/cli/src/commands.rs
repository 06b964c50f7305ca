//! Subcommand implementations. Every command writes its artifacts
//! atomically into `--out` together with a `manifest.txt`.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::Parser;
use evtrack_core::cells::DeltaThreshold;
use evtrack_core::events::dataset::{read_dataset, write_dataset, EVENTS_FILE, LABELS_FILE, META_FILE};
use evtrack_core::events::synth::{generate_synthetic_stream, Motion, SyntheticSceneConfig};
use evtrack_core::events::{Framing, Recording, RecordingMeta, SequenceSample};
use evtrack_core::io::write_atomic;
use evtrack_core::metrics::report::{
    dense_macs_csv, metrics_csv, ops_csv, pretty_table, seqlen_csv, theta_csv, theta_layers_csv,
};
use evtrack_core::metrics::sparsity::count_dense_macs;
use evtrack_core::metrics::{evaluate, sweep_sequence_length, sweep_theta, Evaluation};
use evtrack_core::model::weights::{load_weights, save_weights};
use evtrack_core::model::{build_model, Model, ModelConfig};
use evtrack_core::train::{split_streams, train, Stream, TrainConfig};
use evtrack_core::Error;

use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::{
    Cli, Command, CountOpsArgs, EvalArgs, EvalTarget, GenArgs, ModelArgs, ReplayArgs, SplitPart, SweepSeqlenArgs,
    SweepThetaArgs, TrainArgs, TrainingArgs,
};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const TRAIN_REPORT_FILE: &str = "train_report.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const OPS_FILE: &str = "ops.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const THETA_FILE: &str = "theta.csv";
pub const THETA_LAYERS_FILE: &str = "theta_layers.csv";
pub const SEQLEN_FILE: &str = "seqlen.csv";
pub const DENSE_MACS_FILE: &str = "dense_macs.csv";

/// Failure of a command, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// Unreadable, malformed or inconsistent input data (exit 3).
    Data(String),
    /// NaN guard or other numerical failure (exit 4).
    Numerical(String),
    /// Anything else; indicates a bug (exit 1).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_numerical() {
            CliError::Numerical(msg)
        } else if e.is_data_error() || matches!(e, Error::Io { .. }) {
            CliError::Data(msg)
        } else if matches!(e, Error::Config(_)) {
            CliError::Usage(msg)
        } else {
            CliError::Internal(msg)
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(command: Command, args: &[String]) -> CliResult {
    match command {
        Command::Gen(a) => gen(&a, args),
        Command::Train(a) => train_cmd(&a, args),
        Command::Eval(a) => eval(&a, args),
        Command::SweepTheta(a) => sweep_theta_cmd(&a, args),
        Command::SweepSeqlen(a) => sweep_seqlen(&a, args),
        Command::CountOps(a) => count_ops(&a, args),
        Command::Replay(a) => replay(&a),
    }
}

/// Creates `dir` and refuses to clobber any of `files` unless forced.
fn prepare_out(dir: &Path, files: &[&str], force: bool) -> CliResult {
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::Usage(format!("{} exists and is not a directory", dir.display())));
    }
    if !force {
        for f in files.iter().chain(std::iter::once(&MANIFEST_FILE)) {
            let p = dir.join(f);
            if p.exists() {
                return Err(CliError::Usage(format!("{} already exists (pass --force to overwrite)", p.display())));
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(dir: &Path, name: &str, text: &str) -> CliResult {
    write_atomic(&dir.join(name), text.as_bytes())?;
    Ok(())
}

fn print_pretty(title: &str, csv_text: &str) -> CliResult {
    println!("{title}\n{}", pretty_table(csv_text)?);
    Ok(())
}

fn join_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(";")
}

/// Loads recordings and checks that they share one sensor geometry.
fn load_streams(paths: &[PathBuf]) -> CliResult<(Vec<Stream>, RecordingMeta)> {
    let mut streams = Vec::with_capacity(paths.len());
    let mut first: Option<RecordingMeta> = None;
    for p in paths {
        let rec = read_dataset(p)?;
        if let Some(m) = first {
            if (m.width, m.height, m.delta_t_us) != (rec.meta.width, rec.meta.height, rec.meta.delta_t_us) {
                return Err(CliError::Data(format!(
                    "{}: {}x{} at {} us does not match the first recording ({}x{} at {} us)",
                    p.display(),
                    rec.meta.width,
                    rec.meta.height,
                    rec.meta.delta_t_us,
                    m.width,
                    m.height,
                    m.delta_t_us
                )));
            }
        } else {
            first = Some(rec.meta);
        }
        streams.push(Stream::from_recording(&rec)?);
    }
    let meta = first.ok_or_else(|| CliError::Usage("at least one --data directory is required".into()))?;
    Ok((streams, meta))
}

fn model_config(m: &ModelArgs, seq_len: usize, meta: &RecordingMeta) -> ModelConfig {
    ModelConfig {
        width: meta.width as usize,
        height: meta.height as usize,
        channels: m.channels.clone(),
        fc_hidden: m.fc_hidden,
        cell: m.cell,
        theta: m.theta,
        delta_rule: m.delta_rule,
        seq_len,
        ..ModelConfig::default()
    }
}

fn train_config(t: &TrainingArgs) -> TrainConfig {
    TrainConfig {
        lr: t.lr,
        epochs: t.epochs,
        batch_size: t.batch,
        seq_len: t.seq_len,
        split: t.split,
        train_theta: t.train_theta,
        seed: t.seed,
        max_clips_per_epoch: t.max_clips_per_epoch,
    }
}

fn record_model(m: &mut Manifest, c: &ModelConfig) {
    m.set("model.width", c.width);
    m.set("model.height", c.height);
    m.set("model.channels", c.channels.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    m.set("model.kernel", c.kernel);
    m.set("model.fc_hidden", c.fc_hidden);
    m.set("model.outputs", c.outputs);
    m.set("model.cell", c.cell);
    m.set("model.theta", c.theta);
    m.set("model.delta_rule", c.delta_rule.as_str());
    m.set("model.seq_len", c.seq_len);
}

fn record_training(m: &mut Manifest, t: &TrainConfig) {
    m.set("train.lr", t.lr);
    m.set("train.epochs", t.epochs);
    m.set("train.batch", t.batch_size);
    m.set("train.seq_len", t.seq_len);
    m.set("train.split", t.split);
    m.set("train.theta", t.train_theta);
    m.set("train.max_clips_per_epoch", t.max_clips_per_epoch.map_or("none".to_string(), |c| c.to_string()));
    m.set("seed.train", t.seed);
}

fn gen(a: &GenArgs, args: &[String]) -> CliResult {
    let dir = &a.out.out;
    prepare_out(dir, &[EVENTS_FILE, LABELS_FILE, META_FILE], a.out.force)?;
    if !(a.duration_s > 0.0 && a.duration_s.is_finite()) {
        return Err(CliError::Usage(format!("duration must be positive, got {}", a.duration_s)));
    }
    let mut manifest = Manifest::new("gen", args);
    let mut scene = SyntheticSceneConfig { width: a.width, height: a.height, seed: a.seed, ..Default::default() };
    if let Some(n) = a.noise_hz {
        scene.noise_rate_hz = n;
    }
    if a.static_pupil {
        scene.motion = Motion::Static { center: (a.width as f64 / 2.0, a.height as f64 / 2.0) };
    }
    let duration_us = (a.duration_s * 1e6).round() as u64;
    let framing = Framing { delta_t_us: a.delta_t_us, width: a.width, height: a.height, t0: 0 };
    let stream = generate_synthetic_stream(&scene, duration_us)?;
    let rec = Recording::from_synthetic(&stream, framing, duration_us, a.seed)?;
    write_dataset(dir, &rec)?;
    log::info!("wrote {} events in {} frames to {}", rec.events.len(), rec.meta.num_frames, dir.display());
    manifest.set("seed.gen", a.seed);
    manifest.set("gen.duration_us", duration_us);
    manifest.set("gen.delta_t_us", a.delta_t_us);
    manifest.set("gen.width", a.width);
    manifest.set("gen.height", a.height);
    manifest.set("gen.noise_hz", scene.noise_rate_hz);
    manifest.set("gen.motion", if a.static_pupil { "static" } else { "natural" });
    manifest.set("gen.events", rec.events.len());
    manifest.set("gen.frames", rec.meta.num_frames);
    manifest.set("outputs", [EVENTS_FILE, LABELS_FILE, META_FILE].join(";"));
    manifest.finish(dir)
}

fn train_cmd(a: &TrainArgs, args: &[String]) -> CliResult {
    let dir = &a.out.out;
    prepare_out(dir, &[WEIGHTS_FILE, TRAIN_REPORT_FILE], a.out.force)?;
    let (streams, meta) = load_streams(&a.data)?;
    let tc = train_config(&a.training);
    let mc = model_config(&a.model, tc.seq_len, &meta);
    let mut manifest = Manifest::new("train", args);
    manifest.set("inputs", join_paths(&a.data));
    record_model(&mut manifest, &mc);
    record_training(&mut manifest, &tc);
    let mut model = build_model::<f32>(&mc, tc.seed)?;
    log::info!("training {} parameters on {} recording(s)", model.param_count(), streams.len());
    let report = train(&mut model, &streams, &tc)?;
    write_text(dir, TRAIN_REPORT_FILE, &report.to_csv())?;
    if let Some(reason) = report.aborted {
        manifest.set("aborted", &reason);
        manifest.set("outputs", TRAIN_REPORT_FILE);
        manifest.finish(dir)?;
        return Err(CliError::Numerical(format!("training stopped: {reason}")));
    }
    save_weights(&model, &dir.join(WEIGHTS_FILE))?;
    manifest.set("outputs", [WEIGHTS_FILE, TRAIN_REPORT_FILE].join(";"));
    manifest.finish(dir)
}

/// Weights with the requested overrides applied, the streams to score, and
/// the sequence length used for clipping.
struct Target {
    model: Model<f32>,
    streams: Vec<Stream>,
    seq_len: usize,
}

fn load_target(t: &EvalTarget) -> CliResult<Target> {
    let mut model = load_weights::<f32>(&t.weights, None)?;
    let (streams, meta) = load_streams(&t.data)?;
    let cfg = model.config().clone();
    if (cfg.width, cfg.height) != (meta.width as usize, meta.height as usize) {
        return Err(CliError::Data(format!(
            "weights expect {}x{} frames but the data is {}x{}",
            cfg.width, cfg.height, meta.width, meta.height
        )));
    }
    if let Some(cell) = t.cell {
        model.set_cell(cell);
    }
    if let Some(theta) = t.theta {
        model.set_threshold(DeltaThreshold::with_rule(theta, cfg.delta_rule)?);
    }
    let seq_len = t.seq_len.unwrap_or(cfg.seq_len);
    if seq_len == 0 {
        return Err(CliError::Usage("sequence length must be >= 1".into()));
    }
    Ok(Target { model, streams, seq_len })
}

fn select_clips<'a>(streams: &'a [Stream], seq_len: usize, t: &EvalTarget) -> CliResult<Vec<SequenceSample<'a>>> {
    let split = split_streams(streams, seq_len, t.split)?;
    let clips = match t.part {
        SplitPart::Train => split.train_tiles,
        SplitPart::Val => split.val,
        SplitPart::All => {
            let mut all = split.train_tiles;
            all.extend(split.val);
            all
        }
    };
    if clips.is_empty() {
        return Err(CliError::Data(format!("no {} frames to evaluate", part_name(t.part))));
    }
    Ok(clips)
}

fn part_name(p: SplitPart) -> &'static str {
    match p {
        SplitPart::Train => "train",
        SplitPart::Val => "val",
        SplitPart::All => "all",
    }
}

fn record_target(m: &mut Manifest, t: &EvalTarget, target: &Target) {
    m.set("inputs", format!("{};{}", t.weights.display(), join_paths(&t.data)));
    record_model(m, target.model.config());
    m.set("eval.seq_len", target.seq_len);
    m.set("eval.part", part_name(t.part));
    m.set("eval.split", t.split);
    m.set("eval.batch", t.batch);
    m.set("eval.pixel_scale", t.pixel_scale);
}

fn predictions_csv(ev: &Evaluation, clips: &[SequenceSample<'_>]) -> String {
    let mut s = String::from("frame,pred_x,pred_y,label_x,label_y\n");
    let frames = clips.iter().flat_map(|c| c.span());
    for ((k, p), l) in frames.zip(&ev.predictions).zip(&ev.labels) {
        s.push_str(&format!("{k},{:.4},{:.4},{:.4},{:.4}\n", p.x, p.y, l.x, l.y));
    }
    s
}

fn eval(a: &EvalArgs, args: &[String]) -> CliResult {
    let dir = &a.out.out;
    prepare_out(dir, &[METRICS_FILE, OPS_FILE, PREDICTIONS_FILE], a.out.force)?;
    let target = load_target(&a.target)?;
    let clips = select_clips(&target.streams, target.seq_len, &a.target)?;
    let mut manifest = Manifest::new("eval", args);
    record_target(&mut manifest, &a.target, &target);
    let ev = evaluate(&target.model, &clips, a.target.batch, a.target.pixel_scale)?;
    let metrics = metrics_csv(part_name(a.target.part), &ev)?;
    let ops = ops_csv(&ev);
    write_text(dir, METRICS_FILE, &metrics)?;
    write_text(dir, OPS_FILE, &ops)?;
    write_text(dir, PREDICTIONS_FILE, &predictions_csv(&ev, &clips))?;
    if a.pretty {
        print_pretty("metrics", &metrics)?;
        print_pretty("ops", &ops)?;
    }
    manifest.set("outputs", [METRICS_FILE, OPS_FILE, PREDICTIONS_FILE].join(";"));
    manifest.finish(dir)
}

fn sweep_theta_cmd(a: &SweepThetaArgs, args: &[String]) -> CliResult {
    let dir = &a.out.out;
    prepare_out(dir, &[THETA_FILE, THETA_LAYERS_FILE], a.out.force)?;
    if a.thetas.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(CliError::Usage("thresholds must be finite and >= 0".into()));
    }
    let target = load_target(&a.target)?;
    let clips = select_clips(&target.streams, target.seq_len, &a.target)?;
    let mut manifest = Manifest::new("sweep-theta", args);
    record_target(&mut manifest, &a.target, &target);
    manifest.set("sweep.thetas", a.thetas.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    let rows = sweep_theta(&target.model, &clips, &a.thetas, a.target.batch, None)?;
    let table = theta_csv(&rows, target.seq_len);
    write_text(dir, THETA_FILE, &table)?;
    write_text(dir, THETA_LAYERS_FILE, &theta_layers_csv(&rows, target.seq_len))?;
    if a.pretty {
        print_pretty("threshold sweep", &table)?;
    }
    manifest.set("outputs", [THETA_FILE, THETA_LAYERS_FILE].join(";"));
    manifest.finish(dir)
}

fn sweep_seqlen(a: &SweepSeqlenArgs, args: &[String]) -> CliResult {
    let dir = &a.out.out;
    let reports: Vec<String> = a.seq_lens.iter().map(|t| format!("train_report_t{t}.csv")).collect();
    let mut files: Vec<&str> = reports.iter().map(String::as_str).collect();
    files.push(SEQLEN_FILE);
    prepare_out(dir, &files, a.out.force)?;
    let (streams, meta) = load_streams(&a.data)?;
    let tc = train_config(&a.training);
    let mc = model_config(&a.model, tc.seq_len, &meta);
    let mut manifest = Manifest::new("sweep-seqlen", args);
    manifest.set("inputs", join_paths(&a.data));
    record_model(&mut manifest, &mc);
    record_training(&mut manifest, &tc);
    manifest.set("sweep.seq_lens", a.seq_lens.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    let rows = sweep_sequence_length(&streams, &a.seq_lens, &mc, &tc)?;
    for (row, name) in rows.iter().zip(&reports) {
        write_text(dir, name, &row.report.to_csv())?;
    }
    let table = seqlen_csv(&rows);
    write_text(dir, SEQLEN_FILE, &table)?;
    if a.pretty {
        print_pretty("sequence-length sweep", &table)?;
    }
    manifest.set("outputs", files.join(";"));
    manifest.finish(dir)
}

fn count_ops(a: &CountOpsArgs, args: &[String]) -> CliResult {
    if !matches!(a.flops_per_mac, 1 | 2) {
        return Err(CliError::Usage(format!("--flops-per-mac must be 1 or 2, got {}", a.flops_per_mac)));
    }
    let config = ModelConfig {
        width: a.width as usize,
        height: a.height as usize,
        channels: a.channels.clone(),
        fc_hidden: a.fc_hidden,
        ..ModelConfig::default()
    };
    let dense = count_dense_macs(&config)?;
    let dense_table = dense_macs_csv(&dense, a.flops_per_mac);
    let mut measured = None;
    if let Some(weights) = &a.weights {
        let target = EvalTarget {
            weights: weights.clone(),
            data: a.data.clone(),
            cell: a.cell,
            theta: a.theta,
            seq_len: None,
            part: SplitPart::All,
            split: 0.8,
            batch: 16,
            pixel_scale: 1.0,
        };
        let t = load_target(&target)?;
        let clips = select_clips(&t.streams, t.seq_len, &target)?;
        let ev = evaluate(&t.model, &clips, target.batch, 1.0)?;
        measured = Some((ops_csv(&ev), metrics_csv("all", &ev)?));
    }
    match &a.out {
        None => {
            println!("parameters: {}", config.param_count()?);
            print_pretty("dense MACs per timestep", &dense_table)?;
            if let Some((ops, metrics)) = &measured {
                print_pretty("measured MACs", ops)?;
                print_pretty("sparsity", metrics)?;
            }
            Ok(())
        }
        Some(dir) => {
            let mut files = vec![DENSE_MACS_FILE];
            if measured.is_some() {
                files.extend([OPS_FILE, METRICS_FILE]);
            }
            prepare_out(dir, &files, a.force)?;
            let mut manifest = Manifest::new("count-ops", args);
            record_model(&mut manifest, &config);
            manifest.set("params", config.param_count()?);
            manifest.set("flops_per_mac", a.flops_per_mac);
            write_text(dir, DENSE_MACS_FILE, &dense_table)?;
            if let Some((ops, metrics)) = &measured {
                manifest.set(
                    "inputs",
                    format!(
                        "{};{}",
                        a.weights.as_ref().map_or(String::new(), |w| w.display().to_string()),
                        join_paths(&a.data)
                    ),
                );
                write_text(dir, OPS_FILE, ops)?;
                write_text(dir, METRICS_FILE, metrics)?;
            }
            manifest.set("outputs", files.join(";"));
            manifest.finish(dir)
        }
    }
}

/// Drops `--out <dir>`, `--out=<dir>` and `--force` from a recorded argument list.
fn strip_out_args(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !(a.starts_with("--out=") || a == "--force") {
            kept.push(a.clone());
        }
    }
    kept
}

fn replay(a: &ReplayArgs) -> CliResult {
    let text =
        std::fs::read_to_string(&a.manifest).map_err(|e| CliError::Data(format!("{}: {e}", a.manifest.display())))?;
    let recorded = Manifest::parse(&text)?.args()?;
    let mut args = recorded.clone();
    if let Some(out) = &a.out {
        args = strip_out_args(&recorded);
        args.push("--out".into());
        args.push(out.display().to_string());
    }
    if a.force && !args.iter().any(|s| s == "--force") {
        args.push("--force".into());
    }
    let argv = std::iter::once("evtrack".to_string()).chain(args.iter().cloned());
    let cli =
        Cli::try_parse_from(argv).map_err(|e| CliError::Usage(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot replay another replay".into()));
    }
    log::info!("replaying: evtrack {}", args.join(" "));
    run(cli.command, &args)
}
