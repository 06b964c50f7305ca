//! Fixed-length clips over a framed recording.

use crate::error::{Error, Result};
use crate::events::frame::VoxelFrame;

/// Pupil centre in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PupilCenter {
    pub x: f64,
    pub y: f64,
}

impl PupilCenter {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PupilCenter) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// `T` consecutive frames with their labels, borrowed from a recording.
#[derive(Debug, Clone, Copy)]
pub struct SequenceSample<'a> {
    pub frames: &'a [VoxelFrame],
    pub labels: &'a [PupilCenter],
    /// Index of the first frame within its recording.
    pub start: usize,
}

impl<'a> SequenceSample<'a> {
    pub fn new(frames: &'a [VoxelFrame], labels: &'a [PupilCenter], start: usize) -> Result<Self> {
        if frames.len() != labels.len() {
            return Err(Error::LabelCountMismatch { labels: labels.len(), frames: frames.len() });
        }
        Ok(Self { frames, labels, start })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame index range `[start, start + len)` within the recording.
    pub fn span(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

/// Number of clips `slice_clips` yields.
pub fn clip_count(n: usize, len: usize, stride: usize) -> usize {
    if len == 0 || stride == 0 || n < len {
        0
    } else {
        (n - len) / stride + 1
    }
}

/// Clip `i` covers frames `[i*stride, i*stride + len)`; clips that would run
/// past the end are dropped.
pub fn slice_clips<'a>(
    frames: &'a [VoxelFrame],
    labels: &'a [PupilCenter],
    len: usize,
    stride: usize,
) -> Result<Vec<SequenceSample<'a>>> {
    if len == 0 || stride == 0 {
        return Err(Error::Config(format!("clip length ({len}) and stride ({stride}) must be >= 1")));
    }
    if frames.len() != labels.len() {
        return Err(Error::LabelCountMismatch { labels: labels.len(), frames: frames.len() });
    }
    Ok((0..clip_count(frames.len(), len, stride))
        .map(|i| {
            let s = i * stride;
            SequenceSample { frames: &frames[s..s + len], labels: &labels[s..s + len], start: s }
        })
        .collect())
}

/// Consecutive non-overlapping clips covering every frame once; the last
/// clip is shorter when `len` does not divide the frame count.
pub fn tile_clips<'a>(
    frames: &'a [VoxelFrame],
    labels: &'a [PupilCenter],
    len: usize,
    offset: usize,
) -> Result<Vec<SequenceSample<'a>>> {
    if len == 0 {
        return Err(Error::Config("clip length must be >= 1".into()));
    }
    if frames.len() != labels.len() {
        return Err(Error::LabelCountMismatch { labels: labels.len(), frames: frames.len() });
    }
    Ok(frames
        .chunks(len)
        .zip(labels.chunks(len))
        .enumerate()
        .map(|(i, (f, l))| SequenceSample { frames: f, labels: l, start: offset + i * len })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> (Vec<VoxelFrame>, Vec<PupilCenter>) {
        ((0..n).map(|k| VoxelFrame::empty(2, 2, k as u64, k as u64 + 1)).collect(), vec![PupilCenter::default(); n])
    }

    #[test]
    fn counts_match_examples() {
        let (f, l) = frames(10);
        assert_eq!(slice_clips(&f, &l, 5, 1).unwrap().len(), 6);
        let (f, l) = frames(40);
        assert_eq!(slice_clips(&f, &l, 40, 1).unwrap().len(), 1);
        assert_eq!(clip_count(11_000, 40, 1), 10_961);
    }

    #[test]
    fn short_recording_yields_nothing() {
        let (f, l) = frames(3);
        assert!(slice_clips(&f, &l, 5, 1).unwrap().is_empty());
    }

    #[test]
    fn clip_windows_follow_stride() {
        let (f, l) = frames(12);
        let clips = slice_clips(&f, &l, 4, 3).unwrap();
        let spans: Vec<_> = clips.iter().map(|c| c.span()).collect();
        assert_eq!(spans, vec![0..4, 3..7, 6..10]);
        assert_eq!(clips[1].frames[0].t_start, 3);
    }

    #[test]
    fn tiling_covers_every_frame_once() {
        let (f, l) = frames(10);
        let tiles = tile_clips(&f, &l, 4, 100).unwrap();
        let spans: Vec<_> = tiles.iter().map(|c| c.span()).collect();
        assert_eq!(spans, vec![100..104, 104..108, 108..110]);
    }

    #[test]
    fn zero_length_is_rejected() {
        let (f, l) = frames(3);
        assert!(slice_clips(&f, &l, 0, 1).is_err());
        assert!(slice_clips(&f, &l, 1, 0).is_err());
    }
}
