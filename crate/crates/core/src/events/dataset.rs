//! On-disk recording format.
//!
//! A recording is a directory holding:
//!
//! * `events.evt`: magic `EVT3ET01`, little-endian `u16` width, `u16` height,
//!   `u32` reserved, then 16-byte records `u16 x, u16 y, i8 p, 3 pad bytes,
//!   u64 t` (microseconds).
//! * `labels.csv`: header `frame_index,x,y`, one row per frame.
//! * `meta.toml`: `key=value` lines (`delta_t_us`, `width`, `height`, `seed`,
//!   `num_frames`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::clips::PupilCenter;
use crate::events::frame::{Event, Framing, Polarity, VoxelFrame};
use crate::events::synth::SyntheticStream;
use crate::io::write_atomic;

pub const EVENTS_MAGIC: &[u8; 8] = b"EVT3ET01";
pub const EVENTS_FILE: &str = "events.evt";
pub const LABELS_FILE: &str = "labels.csv";
pub const META_FILE: &str = "meta.toml";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordingMeta {
    pub delta_t_us: u64,
    pub width: u16,
    pub height: u16,
    pub seed: u64,
    pub num_frames: usize,
}

impl RecordingMeta {
    pub fn framing(&self) -> Framing {
        Framing { delta_t_us: self.delta_t_us, width: self.width, height: self.height, t0: 0 }
    }
}

/// One event stream with per-frame pupil labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub events: Vec<Event>,
    pub labels: Vec<PupilCenter>,
}

impl Recording {
    /// Frames the first `floor(duration / dt)` bins of a synthetic stream and
    /// labels each frame with the pupil centre at its bin end. Events past
    /// the last full bin are dropped.
    pub fn from_synthetic(stream: &SyntheticStream, framing: Framing, duration_us: u64, seed: u64) -> Result<Self> {
        if framing.delta_t_us == 0 {
            return Err(Error::Config("bin width must be positive".into()));
        }
        let num_frames = (duration_us / framing.delta_t_us) as usize;
        let end = framing.bin_end(num_frames.max(1) - 1);
        let events: Vec<Event> = stream.events.iter().copied().filter(|e| num_frames > 0 && e.t <= end).collect();
        let labels = (0..num_frames)
            .map(|k| {
                let (x, y) = stream.trajectory.at(framing.bin_end(k));
                PupilCenter::new(x, y)
            })
            .collect();
        let meta = RecordingMeta {
            delta_t_us: framing.delta_t_us,
            width: framing.width,
            height: framing.height,
            seed,
            num_frames,
        };
        let rec = Self { meta, events, labels };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if self.labels.len() != m.num_frames {
            return Err(Error::LabelCountMismatch { labels: self.labels.len(), frames: m.num_frames });
        }
        let framing = m.framing();
        if let Some(last) = self.events.last() {
            let needed = framing.bin_of(last.t).map_or(0, |k| k + 1);
            if needed > m.num_frames {
                return Err(Error::LabelCountMismatch { labels: self.labels.len(), frames: needed });
            }
        }
        for (i, l) in self.labels.iter().enumerate() {
            let ok = l.x >= 0.0 && l.x < m.width as f64 && l.y >= 0.0 && l.y < m.height as f64;
            if !ok {
                return Err(Error::Malformed {
                    what: "labels",
                    offset: i as u64,
                    detail: format!("label ({}, {}) lies outside the frame", l.x, l.y),
                });
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> Result<Vec<VoxelFrame>> {
        self.meta.framing().frame_events_n(&self.events, self.meta.num_frames)
    }
}

pub fn encode_events(width: u16, height: u16, events: &[Event]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * events.len());
    buf.extend_from_slice(EVENTS_MAGIC);
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for e in events {
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.sign() as i8 as u8);
        buf.extend_from_slice(&[0u8; 3]);
        buf.extend_from_slice(&e.t.to_le_bytes());
    }
    buf
}

/// Parses an event file, returning `(width, height, events)`.
pub fn decode_events(bytes: &[u8]) -> Result<(u16, u16, Vec<Event>)> {
    const WHAT: &str = "event file";
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { what: WHAT, offset: bytes.len() as u64 });
    }
    if &bytes[..8] != EVENTS_MAGIC {
        return Err(Error::Malformed { what: WHAT, offset: 0, detail: "bad magic".into() });
    }
    let width = u16::from_le_bytes([bytes[8], bytes[9]]);
    let height = u16::from_le_bytes([bytes[10], bytes[11]]);
    let body = &bytes[HEADER_LEN..];
    let full = body.len() / RECORD_LEN;
    if !body.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::Truncated { what: WHAT, offset: (HEADER_LEN + full * RECORD_LEN) as u64 });
    }
    let mut events = Vec::with_capacity(full);
    let mut prev = 0u64;
    for (index, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = (HEADER_LEN + index * RECORD_LEN) as u64;
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let p = Polarity::from_sign(rec[4] as i8).ok_or_else(|| Error::Malformed {
            what: WHAT,
            offset: offset + 4,
            detail: format!("polarity {} is not +1 or -1", rec[4] as i8),
        })?;
        let t = u64::from_le_bytes(rec[8..16].try_into().expect("8 bytes"));
        if x >= width || y >= height {
            return Err(Error::EventOutOfBounds { index, x, y, width, height });
        }
        if index > 0 && t < prev {
            return Err(Error::UnsortedEvents { index, prev, t });
        }
        prev = t;
        events.push(Event { x, y, t, p });
    }
    Ok((width, height, events))
}

fn encode_meta(m: &RecordingMeta) -> String {
    format!(
        "delta_t_us={}\nwidth={}\nheight={}\nseed={}\nnum_frames={}\n",
        m.delta_t_us, m.width, m.height, m.seed, m.num_frames
    )
}

/// Parses `key=value` lines into `(key, value, byte offset)`.
pub(crate) fn parse_key_values(text: &str, what: &'static str) -> Result<Vec<(String, String, u64)>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let (k, v) = trimmed.split_once('=').ok_or_else(|| Error::Malformed {
                what,
                offset,
                detail: format!("expected key=value, got `{trimmed}`"),
            })?;
            out.push((k.trim().to_string(), v.trim().trim_matches('"').to_string(), offset));
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

fn decode_meta(text: &str) -> Result<(u64, u16, u16, u64, Option<usize>)> {
    const WHAT: &str = "meta file";
    let kv = parse_key_values(text, WHAT)?;
    fn get<T: std::str::FromStr>(kv: &[(String, String, u64)], key: &str) -> Result<Option<T>> {
        match kv.iter().find(|(k, _, _)| k == key) {
            None => Ok(None),
            Some((_, v, off)) => v.parse().map(Some).map_err(|_| Error::Malformed {
                what: WHAT,
                offset: *off,
                detail: format!("cannot parse `{key}` value `{v}`"),
            }),
        }
    }
    let missing =
        |key: &str| Error::Malformed { what: WHAT, offset: text.len() as u64, detail: format!("missing `{key}`") };
    let delta_t_us = get(&kv, "delta_t_us")?.ok_or_else(|| missing("delta_t_us"))?;
    let width = get(&kv, "width")?.ok_or_else(|| missing("width"))?;
    let height = get(&kv, "height")?.ok_or_else(|| missing("height"))?;
    let seed = get(&kv, "seed")?.unwrap_or(0);
    let num_frames = get(&kv, "num_frames")?;
    if delta_t_us == 0 {
        return Err(Error::Malformed { what: WHAT, offset: 0, detail: "delta_t_us must be positive".into() });
    }
    Ok((delta_t_us, width, height, seed, num_frames))
}

fn encode_labels(labels: &[PupilCenter]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e| Error::Csv { path: LABELS_FILE.into(), source: e };
    w.write_record(["frame_index", "x", "y"]).map_err(err)?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([i.to_string(), l.x.to_string(), l.y.to_string()]).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::io(LABELS_FILE, e.into_error()))
}

fn decode_labels(path: &Path, bytes: &[u8]) -> Result<Vec<PupilCenter>> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers().map_err(|e| Error::Csv { path: path.into(), source: e })?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["frame_index", "x", "y"] {
        return Err(Error::Malformed { what: "labels", offset: 0, detail: "header must be `frame_index,x,y`".into() });
    }
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv { path: path.into(), source: e })?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let bad = |detail: String| Error::Malformed { what: "labels", offset, detail };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let idx: usize = rec[0].trim().parse().map_err(|_| bad(format!("bad frame index `{}`", &rec[0])))?;
        if idx != i {
            return Err(bad(format!("frame index {idx} out of sequence (expected {i})")));
        }
        let x: f64 = rec[1].trim().parse().map_err(|_| bad(format!("bad x `{}`", &rec[1])))?;
        let y: f64 = rec[2].trim().parse().map_err(|_| bad(format!("bad y `{}`", &rec[2])))?;
        labels.push(PupilCenter::new(x, y));
    }
    Ok(labels)
}

/// Writes a recording directory, creating it if necessary.
pub fn write_dataset(dir: &Path, rec: &Recording) -> Result<()> {
    rec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(EVENTS_FILE), &encode_events(rec.meta.width, rec.meta.height, &rec.events))?;
    write_atomic(&dir.join(LABELS_FILE), &encode_labels(&rec.labels)?)?;
    write_atomic(&dir.join(META_FILE), encode_meta(&rec.meta).as_bytes())?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Recording> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(p, e))
    };
    let meta_text = String::from_utf8(read(META_FILE)?).map_err(|e| Error::Malformed {
        what: "meta file",
        offset: e.utf8_error().valid_up_to() as u64,
        detail: "not UTF-8".into(),
    })?;
    let (delta_t_us, width, height, seed, num_frames) = decode_meta(&meta_text)?;
    let (ew, eh, events) = decode_events(&read(EVENTS_FILE)?)?;
    if (ew, eh) != (width, height) {
        return Err(Error::Malformed {
            what: "event file",
            offset: 8,
            detail: format!("sensor {ew}x{eh} disagrees with meta {width}x{height}"),
        });
    }
    let labels = decode_labels(&dir.join(LABELS_FILE), &read(LABELS_FILE)?)?;
    let num_frames = num_frames.unwrap_or(labels.len());
    let rec = Recording { meta: RecordingMeta { delta_t_us, width, height, seed, num_frames }, events, labels };
    rec.validate()?;
    Ok(rec)
}
