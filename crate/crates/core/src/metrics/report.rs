//! CSV tables and a plain-text renderer for terminals.
//!
//! Column names: `inp_sp`, `hid_sp` and `tot_sp`
//! are the input, hidden and total sparsity; MACs are given both per frame
//! and per sequence of `seq_len` frames.

use crate::error::{Error, Result};
use crate::metrics::eval::{Evaluation, SeqLenRow, ThetaRow};
use crate::metrics::sparsity::DenseMacs;

fn to_csv(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn f1(v: f64) -> String {
    format!("{v:.1}")
}

pub const THETA_HEADER: [&str; 16] = [
    "theta",
    "layer",
    "inp_sp",
    "hid_sp",
    "tot_sp",
    "inp_sp_layer_avg",
    "hid_sp_layer_avg",
    "tot_sp_layer_avg",
    "p3",
    "p5",
    "p10",
    "dense_macs_per_frame",
    "effective_macs_per_frame",
    "dense_macs_per_seq",
    "effective_macs_per_seq",
    "reduction",
];

/// One network-level row per threshold.
pub fn theta_csv(rows: &[ThetaRow], seq_len: usize) -> String {
    let t = seq_len as f64;
    let body = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                r.theta.to_string(),
                "all".into(),
                f6(s.inp_sp),
                f6(s.hid_sp),
                f6(s.tot_sp),
                f6(s.inp_sp_layer_avg),
                f6(s.hid_sp_layer_avg),
                f6(s.tot_sp_layer_avg),
                f6(r.rates.p3),
                f6(r.rates.p5),
                f6(r.rates.p10),
                f1(r.dense_per_frame()),
                f1(r.effective_per_frame()),
                f1(r.dense_per_frame() * t),
                f1(r.effective_per_frame() * t),
                format!("{:.4}", r.reduction),
            ]
        })
        .collect();
    to_csv(&THETA_HEADER, body)
}

pub const THETA_LAYER_HEADER: [&str; 9] = [
    "theta",
    "layer",
    "inp_sp",
    "hid_sp",
    "tot_sp",
    "dense_macs_per_frame",
    "effective_macs_per_frame",
    "dense_macs_per_seq",
    "effective_macs_per_seq",
];

/// One row per threshold and recurrent layer (layers numbered from 1).
pub fn theta_layers_csv(rows: &[ThetaRow], seq_len: usize) -> String {
    let t = seq_len as f64;
    let mut body = Vec::new();
    for r in rows {
        let n = r.frames as f64;
        for (l, (ls, macs)) in r.summary.layers.iter().zip(&r.layer_macs).enumerate() {
            body.push(vec![
                r.theta.to_string(),
                (l + 1).to_string(),
                f6(ls.inp_sp),
                f6(ls.hid_sp),
                f6(ls.tot_sp),
                f1(macs.dense as f64 / n),
                f1(macs.effective as f64 / n),
                f1(macs.dense as f64 / n * t),
                f1(macs.effective as f64 / n * t),
            ]);
        }
    }
    to_csv(&THETA_LAYER_HEADER, body)
}

pub fn seqlen_csv(rows: &[SeqLenRow]) -> String {
    let body =
        rows.iter().map(|r| vec![r.seq_len.to_string(), f6(r.rates.p3), f6(r.rates.p5), f6(r.rates.p10)]).collect();
    to_csv(&["seq_len", "p3", "p5", "p10"], body)
}

/// Accuracy and network sparsity of one evaluation.
pub fn metrics_csv(label: &str, ev: &Evaluation) -> Result<String> {
    let s = ev.summary()?;
    let conv = ev.conv_macs();
    let n = ev.frames as f64;
    Ok(to_csv(
        &[
            "split",
            "frames",
            "mse",
            "p3",
            "p5",
            "p10",
            "inp_sp",
            "hid_sp",
            "tot_sp",
            "dense_macs_per_frame",
            "effective_macs_per_frame",
        ],
        vec![vec![
            label.to_string(),
            ev.frames.to_string(),
            format!("{:.9}", ev.mse),
            f6(ev.rates.p3),
            f6(ev.rates.p5),
            f6(ev.rates.p10),
            f6(s.inp_sp),
            f6(s.hid_sp),
            f6(s.tot_sp),
            f1(conv.dense as f64 / n),
            f1(conv.effective as f64 / n),
        ]],
    ))
}

/// Measured MACs per op site (layers numbered from 1; the FC layers follow
/// the recurrent ones).
pub fn ops_csv(ev: &Evaluation) -> String {
    let n = ev.frames as f64;
    let body = ev
        .ops
        .iter()
        .map(|(k, c)| {
            vec![
                (k.layer + 1).to_string(),
                k.path.to_string(),
                c.dense.to_string(),
                c.effective.to_string(),
                f1(c.dense as f64 / n),
                f1(c.effective as f64 / n),
                f6(c.skipped_fraction()),
            ]
        })
        .collect();
    to_csv(
        &["layer", "path", "dense_macs", "effective_macs", "dense_per_frame", "effective_per_frame", "skipped"],
        body,
    )
}

/// Analytic per-timestep dense MACs. With `flops_per_mac = 2` the count is
/// doubled, for comparisons with tables that count multiply and add
/// separately.
pub fn dense_macs_csv(d: &DenseMacs, flops_per_mac: u64) -> String {
    let mut body = Vec::new();
    for (l, m) in d.layers.iter().enumerate() {
        let name = (l + 1).to_string();
        body.push(vec![name.clone(), "input".into(), (m.input * flops_per_mac).to_string()]);
        body.push(vec![name, "hidden".into(), (m.hidden * flops_per_mac).to_string()]);
    }
    let n = d.layers.len();
    body.push(vec![(n + 1).to_string(), "fc".into(), (d.fc1 * flops_per_mac).to_string()]);
    body.push(vec![(n + 2).to_string(), "fc".into(), (d.fc2 * flops_per_mac).to_string()]);
    body.push(vec!["conv".into(), "total".into(), (d.conv_total() * flops_per_mac).to_string()]);
    body.push(vec!["all".into(), "total".into(), (d.total() * flops_per_mac).to_string()]);
    let unit = if flops_per_mac == 1 { "macs_per_timestep" } else { "flops_per_timestep" };
    to_csv(&["layer", "path", unit], body)
}

/// Renders CSV text as a column-aligned table.
pub fn pretty_table(csv_text: &str) -> Result<String> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(csv_text.as_bytes());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Config(format!("unreadable table: {e}")))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r.iter().enumerate().map(|(c, v)| format!("{v:>w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    Ok(out)
}
