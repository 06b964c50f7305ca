//! Pupil detection rate: the fraction of frames whose prediction lies
//! strictly closer than `p` pixels to the label.

use crate::error::{Error, Result};
use crate::events::PupilCenter;

/// Pixel thresholds reported by default.
pub const DETECTION_THRESHOLDS: [f64; 3] = [3.0, 5.0, 10.0];

/// `scale` converts distances into the pixel units the threshold refers to
/// (1.0 at the network resolution).
pub fn detection_rate_scaled(preds: &[PupilCenter], labels: &[PupilCenter], p: f64, scale: f64) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape("detection_rate", format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Empty("detection_rate input"));
    }
    if !(p > 0.0) {
        return Err(Error::Config(format!("detection threshold must be positive, got {p}")));
    }
    let hits = preds.iter().zip(labels).filter(|(a, b)| a.distance(b) * scale < p).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn detection_rate(preds: &[PupilCenter], labels: &[PupilCenter], p: f64) -> Result<f64> {
    detection_rate_scaled(preds, labels, p, 1.0)
}

/// Detection rates at 3, 5 and 10 pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetectionRates {
    pub p3: f64,
    pub p5: f64,
    pub p10: f64,
}

impl DetectionRates {
    pub fn compute(preds: &[PupilCenter], labels: &[PupilCenter], scale: f64) -> Result<Self> {
        let [a, b, c] = DETECTION_THRESHOLDS;
        Ok(Self {
            p3: detection_rate_scaled(preds, labels, a, scale)?,
            p5: detection_rate_scaled(preds, labels, b, scale)?,
            p10: detection_rate_scaled(preds, labels, c, scale)?,
        })
    }
}
