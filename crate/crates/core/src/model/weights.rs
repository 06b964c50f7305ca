//! Weight file format.
//!
//! Layout: the 8-byte magic `3ETW0001`, a little-endian `u32` header length,
//! a UTF-8 header of `key=value` lines, then every tensor as little-endian
//! `f32` in header order. The header records the architecture and one
//! `tensor=<name> <d0>x<d1>x... <byte offset>` line per parameter and
//! batch-norm running statistic; offsets are relative to the payload start.

use std::fs;
use std::path::Path;

use crate::cells::{CellKind, DeltaRule};
use crate::error::{Error, Result};
use crate::events::dataset::parse_key_values;
use crate::io::write_atomic;
use crate::model::{Model, ModelConfig, TensorRole};
use crate::ops::batchnorm::RunningStats;
use crate::tensor::Scalar;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"3ETW0001";
const MAGIC_FAMILY: &[u8; 4] = b"3ETW";
const WHAT: &str = "weight file";

fn dims_str(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Serializes parameters and running statistics.
pub fn write_weights<F: Scalar>(model: &Model<F>) -> Vec<u8> {
    let cfg = model.config();
    let mut header = String::new();
    header.push_str(&format!("width={}\n", cfg.width));
    header.push_str(&format!("height={}\n", cfg.height));
    header.push_str(&format!("channels={}\n", cfg.channels.iter().map(usize::to_string).collect::<Vec<_>>().join(",")));
    header.push_str(&format!("kernel={}\n", cfg.kernel));
    header.push_str(&format!("fc_hidden={}\n", cfg.fc_hidden));
    header.push_str(&format!("outputs={}\n", cfg.outputs));
    header.push_str(&format!("cell={}\n", cfg.cell));
    header.push_str(&format!("theta={}\n", cfg.theta));
    header.push_str(&format!("delta_rule={}\n", cfg.delta_rule.as_str()));
    header.push_str(&format!("seq_len={}\n", cfg.seq_len));
    let mut payload = Vec::new();
    model.visit(|name, shape, _, data| {
        header.push_str(&format!("tensor={name} {} {}\n", dims_str(shape), payload.len()));
        for v in data {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    });
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&payload);
    out
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn malformed(offset: u64, detail: impl Into<String>) -> Error {
    Error::Malformed { what: WHAT, offset, detail: detail.into() }
}

fn parse_header(text: &str, base: u64) -> Result<(ModelConfig, Vec<TensorEntry>)> {
    let mut cfg = ModelConfig::default();
    let mut tensors = Vec::new();
    for (key, value, off) in parse_key_values(text, WHAT)? {
        let at = base + off;
        let bad = |what: &str| malformed(at, format!("bad {what} value `{value}`"));
        match key.as_str() {
            "width" => cfg.width = value.parse().map_err(|_| bad("width"))?,
            "height" => cfg.height = value.parse().map_err(|_| bad("height"))?,
            "channels" => {
                cfg.channels =
                    value.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad("channels"))?
            }
            "kernel" => cfg.kernel = value.parse().map_err(|_| bad("kernel"))?,
            "fc_hidden" => cfg.fc_hidden = value.parse().map_err(|_| bad("fc_hidden"))?,
            "outputs" => cfg.outputs = value.parse().map_err(|_| bad("outputs"))?,
            "cell" => cfg.cell = value.parse::<CellKind>().map_err(|_| bad("cell"))?,
            "theta" => cfg.theta = value.parse().map_err(|_| bad("theta"))?,
            "delta_rule" => cfg.delta_rule = value.parse::<DeltaRule>().map_err(|_| bad("delta_rule"))?,
            "seq_len" => cfg.seq_len = value.parse().map_err(|_| bad("seq_len"))?,
            "tensor" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [name, dims, offset] = parts[..] else {
                    return Err(malformed(at, format!("expected `name dims offset`, got `{value}`")));
                };
                let shape =
                    dims.split('x').map(str::parse).collect::<Result<Vec<usize>, _>>().map_err(|_| bad("dims"))?;
                let offset = offset.parse().map_err(|_| bad("offset"))?;
                tensors.push(TensorEntry { name: name.to_string(), shape, offset });
            }
            other => return Err(malformed(at, format!("unknown header key `{other}`"))),
        }
    }
    Ok((cfg, tensors))
}

/// Same architecture? Runtime settings (cell kind, threshold, sequence
/// length) are allowed to differ.
fn same_architecture(a: &ModelConfig, b: &ModelConfig) -> bool {
    a.width == b.width
        && a.height == b.height
        && a.channels == b.channels
        && a.kernel == b.kernel
        && a.fc_hidden == b.fc_hidden
        && a.outputs == b.outputs
}

/// Parses a weight file. With `expected`, the stored tensors are checked
/// against that configuration's layout (the first mismatching tensor is
/// reported) and the returned model carries `expected`'s runtime settings.
pub fn read_weights<F: Scalar>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Model<F>> {
    if bytes.len() < 12 {
        return Err(Error::Truncated { what: WHAT, offset: bytes.len() as u64 });
    }
    if &bytes[..8] != WEIGHTS_MAGIC {
        if &bytes[..4] == MAGIC_FAMILY {
            return Err(Error::Version {
                found: String::from_utf8_lossy(&bytes[4..8]).into_owned(),
                expected: "0001".into(),
            });
        }
        return Err(malformed(0, "bad magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload_start = 12 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Truncated { what: WHAT, offset: bytes.len() as u64 });
    }
    let text = std::str::from_utf8(&bytes[12..payload_start]).map_err(|e| malformed(12, e.to_string()))?;
    let (stored_cfg, entries) = parse_header(text, 12)?;
    let cfg = match expected {
        Some(e) => e.clone(),
        None => stored_cfg.clone(),
    };
    let mut model = Model::<F>::skeleton(&cfg)?;

    // Compare the stored layout against the layout the configuration needs.
    let mut wanted = Vec::new();
    model.visit(|name, shape, _, _| wanted.push((name.to_string(), shape.to_vec())));
    for (i, (name, shape)) in wanted.iter().enumerate() {
        let Some(entry) = entries.get(i) else {
            return Err(Error::WeightMismatch { name: name.clone(), detail: "missing from file".into() });
        };
        if &entry.name != name {
            return Err(Error::WeightMismatch {
                name: name.clone(),
                detail: format!("file has `{}` in its place", entry.name),
            });
        }
        if &entry.shape != shape {
            return Err(Error::WeightMismatch {
                name: name.clone(),
                detail: format!("file shape {:?}, configuration needs {:?}", entry.shape, shape),
            });
        }
    }
    if let Some(extra) = entries.get(wanted.len()) {
        return Err(Error::WeightMismatch {
            name: extra.name.clone(),
            detail: "not part of this configuration".into(),
        });
    }
    if !same_architecture(&stored_cfg, &cfg) {
        return Err(Error::WeightMismatch {
            name: "header".into(),
            detail: "stored architecture differs from the configuration".into(),
        });
    }

    let payload = &bytes[payload_start..];
    let mut idx = 0;
    let mut err = None;
    model.visit_mut(|_, _, dst| {
        if err.is_some() {
            return;
        }
        let e = &entries[idx];
        idx += 1;
        let end = e.offset + 4 * dst.len();
        if end > payload.len() {
            err = Some(Error::Truncated { what: WHAT, offset: (payload_start + payload.len()) as u64 });
            return;
        }
        for (k, v) in dst.iter_mut().enumerate() {
            let at = e.offset + 4 * k;
            *v = F::from_f64(f32::from_le_bytes(payload[at..at + 4].try_into().expect("4 bytes")) as f64);
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let mut finite = true;
    model.visit(|_, _, _, d| finite &= d.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::NonFinite { op: "load_weights" });
    }
    Ok(model)
}

pub fn save_weights<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    write_atomic(path, &write_weights(model))
}

pub fn load_weights<F: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<Model<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes, expected)
}

impl<F: Scalar> Model<F> {
    /// A zero-filled model with the layout of `config`, including running
    /// statistics.
    pub(crate) fn skeleton(config: &ModelConfig) -> Result<Self> {
        let mut m = crate::model::build_model::<F>(config, 0)?;
        m.visit_mut(|_, role, d| {
            if role == TensorRole::Param {
                d.fill(F::zero())
            }
        });
        for layer in &mut m.layers {
            let n = layer.bn.channels();
            layer.bn.running = Some(RunningStats { mean: vec![F::zero(); n], var: vec![F::one(); n] });
        }
        Ok(m)
    }
}
