//! DVS events and constant time-bin framing.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default bin width in microseconds.
pub const DEFAULT_DELTA_T_US: u64 = 4400;
pub const DEFAULT_WIDTH: u16 = 80;
pub const DEFAULT_HEIGHT: u16 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn sign(self) -> i32 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_sign(s: i8) -> Option<Self> {
        match s {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

/// Signed per-pixel event counts for the bin `(t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelFrame {
    pub width: u16,
    pub height: u16,
    pub t_start: u64,
    pub t_end: u64,
    /// Row-major `[height][width]`.
    pub counts: Vec<i32>,
}

impl VoxelFrame {
    pub fn empty(width: u16, height: u16, t_start: u64, t_end: u64) -> Self {
        Self { width, height, t_start, t_end, counts: vec![0; width as usize * height as usize] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> i32 {
        self.counts[y * self.width as usize + x]
    }

    pub fn signed_mass(&self) -> i64 {
        self.counts.iter().map(|&c| c as i64).sum()
    }

    pub fn nonzero_pixels(&self) -> usize {
        self.counts.iter().filter(|&&c| c != 0).count()
    }

    /// `[1, H, W]` tensor of raw counts (no normalization).
    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        let data = self.counts.iter().map(|&c| F::from_f64(c as f64)).collect();
        Tensor::from_vec(&[1, self.height as usize, self.width as usize], data).expect("frame size")
    }
}

/// Framing parameters. Frame `k` covers `(t0 + k*dt, t0 + (k+1)*dt]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub delta_t_us: u64,
    pub width: u16,
    pub height: u16,
    pub t0: u64,
}

impl Default for Framing {
    fn default() -> Self {
        Self { delta_t_us: DEFAULT_DELTA_T_US, width: DEFAULT_WIDTH, height: DEFAULT_HEIGHT, t0: 0 }
    }
}

impl Framing {
    /// Bin index of timestamp `t`, or `None` when `t <= t0`.
    #[inline]
    pub fn bin_of(&self, t: u64) -> Option<usize> {
        (t > self.t0).then(|| ((t - self.t0 - 1) / self.delta_t_us) as usize)
    }

    pub fn bin_end(&self, k: usize) -> u64 {
        self.t0 + (k as u64 + 1) * self.delta_t_us
    }

    fn validate(&self, events: &[Event]) -> Result<()> {
        if self.delta_t_us == 0 {
            return Err(Error::Config("bin width must be positive".into()));
        }
        let mut prev = 0u64;
        for (index, e) in events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::EventOutOfBounds { index, x: e.x, y: e.y, width: self.width, height: self.height });
            }
            if index > 0 && e.t < prev {
                return Err(Error::UnsortedEvents { index, prev, t: e.t });
            }
            prev = e.t;
        }
        Ok(())
    }

    /// Frames up to and including the bin of the last event.
    pub fn frame_events(&self, events: &[Event]) -> Result<Vec<VoxelFrame>> {
        let n = events.last().and_then(|e| self.bin_of(e.t)).map_or(0, |k| k + 1);
        self.frame_events_n(events, n)
    }

    /// Exactly `n` frames; events at or before `t0` or after the last bin are
    /// not counted.
    pub fn frame_events_n(&self, events: &[Event], n: usize) -> Result<Vec<VoxelFrame>> {
        self.validate(events)?;
        let mut frames: Vec<VoxelFrame> = (0..n)
            .map(|k| VoxelFrame::empty(self.width, self.height, self.bin_end(k) - self.delta_t_us, self.bin_end(k)))
            .collect();
        let w = self.width as usize;
        for e in events {
            if let Some(k) = self.bin_of(e.t).filter(|&k| k < n) {
                frames[k].counts[e.y as usize * w + e.x as usize] += e.p.sign();
            }
        }
        Ok(frames)
    }
}

/// Frames covering every event after `t0`.
pub fn frame_events(events: &[Event], delta_t_us: u64, width: u16, height: u16, t0: u64) -> Result<Vec<VoxelFrame>> {
    Framing { delta_t_us, width, height, t0 }.frame_events(events)
}
