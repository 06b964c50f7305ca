//! Synthetic DVS recordings of a dark pupil moving over a brighter background.
//!
//! A disk is rendered with a one-pixel linear edge ramp at a fine internal
//! time step. Each pixel keeps the log intensity at which it last fired; when
//! the current log intensity differs from that reference by at least the
//! contrast threshold the pixel emits one event per threshold crossing, with
//! polarity equal to the sign of the change. Background noise events are
//! drawn from a Poisson process and do not move pixel references.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use crate::error::{Error, Result};
use crate::events::frame::{Event, Polarity, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::rng::{stream_rng, SubSeed};

/// Random eye-movement statistics: Ornstein-Uhlenbeck drift plus saccades,
/// each saccade followed by a still fixation.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalMotion {
    /// Velocity diffusion, px/s per sqrt(s).
    pub drift_sigma: f64,
    /// Mean reversion of the drift velocity, 1/s.
    pub drift_damping: f64,
    /// Drift speed cap, px/s.
    pub max_drift_speed: f64,
    /// Expected saccades per second.
    pub saccade_rate_hz: f64,
    /// Saccade length range, px.
    pub saccade_amplitude: (f64, f64),
    pub saccade_duration_us: u64,
    /// Mean still period after a saccade.
    pub mean_fixation_us: u64,
}

impl Default for NaturalMotion {
    fn default() -> Self {
        Self {
            drift_sigma: 80.0,
            drift_damping: 1.5,
            max_drift_speed: 40.0,
            saccade_rate_hz: 1.5,
            saccade_amplitude: (6.0, 25.0),
            saccade_duration_us: 25_000,
            mean_fixation_us: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Static {
        center: (f64, f64),
    },
    /// Constant velocity (px/s), reflected at the frame border.
    Linear {
        start: (f64, f64),
        velocity: (f64, f64),
    },
    Natural(NaturalMotion),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneConfig {
    pub width: u16,
    pub height: u16,
    /// Pupil radius range in pixels; one radius is drawn per recording.
    pub pupil_radius: (f64, f64),
    pub motion: Motion,
    /// Log-intensity change that fires one event.
    pub event_threshold: f64,
    /// Background noise events per pixel per second.
    pub noise_rate_hz: f64,
    pub background_level: f64,
    pub pupil_level: f64,
    /// Internal simulation step.
    pub step_us: u64,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            pupil_radius: (5.0, 8.0),
            motion: Motion::Natural(NaturalMotion::default()),
            event_threshold: 0.2,
            noise_rate_hz: 0.05,
            background_level: 0.8,
            pupil_level: 0.08,
            step_us: 200,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = self.pupil_radius;
        let bad = |m: &str| Err(Error::Config(format!("synthetic scene: {m}")));
        if !(r0 > 0.0 && r1 >= r0) {
            return bad("pupil radius range must be positive and ordered");
        }
        let max_r = r1 + 1.0;
        if 2.0 * max_r >= self.width as f64 || 2.0 * max_r >= self.height as f64 {
            return bad("pupil does not fit inside the frame");
        }
        if !(self.event_threshold > 0.0) {
            return bad("event threshold must be positive");
        }
        if !(self.noise_rate_hz >= 0.0) {
            return bad("noise rate must be non-negative");
        }
        if !(self.background_level > 0.0 && self.pupil_level > 0.0) {
            return bad("intensity levels must be positive");
        }
        if self.step_us == 0 {
            return bad("step must be positive");
        }
        if let Motion::Natural(m) = &self.motion {
            if m.saccade_amplitude.0 > m.saccade_amplitude.1 || m.saccade_duration_us == 0 || m.max_drift_speed < 0.0 {
                return bad("invalid natural motion parameters");
            }
        }
        Ok(())
    }
}

/// Pupil centre sampled at every simulation step (including t = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    step_us: u64,
    points: Vec<(f64, f64)>,
    pub radius: f64,
}

impl Trajectory {
    /// Linearly interpolated centre at time `t` (clamped to the simulated span).
    pub fn at(&self, t: u64) -> (f64, f64) {
        let k = (t / self.step_us) as usize;
        if k + 1 >= self.points.len() {
            return *self.points.last().expect("trajectory has the initial point");
        }
        let a = (t - k as u64 * self.step_us) as f64 / self.step_us as f64;
        let (p, q) = (self.points[k], self.points[k + 1]);
        (p.0 + a * (q.0 - p.0), p.1 + a * (q.1 - p.1))
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub events: Vec<Event>,
    pub trajectory: Trajectory,
}

enum Phase {
    Drift,
    Saccade { from: (f64, f64), to: (f64, f64), start: u64, end: u64 },
    Fixation { until: u64 },
}

struct Mover<'a> {
    motion: &'a Motion,
    bounds: ((f64, f64), (f64, f64)),
    pos: (f64, f64),
    vel: (f64, f64),
    phase: Phase,
}

impl Mover<'_> {
    fn clamp(&self, p: (f64, f64)) -> (f64, f64) {
        let ((x0, x1), (y0, y1)) = self.bounds;
        (p.0.clamp(x0, x1), p.1.clamp(y0, y1))
    }

    fn reflect(&mut self) {
        let ((x0, x1), (y0, y1)) = self.bounds;
        if self.pos.0 < x0 || self.pos.0 > x1 {
            self.pos.0 = if self.pos.0 < x0 { 2.0 * x0 - self.pos.0 } else { 2.0 * x1 - self.pos.0 };
            self.vel.0 = -self.vel.0;
        }
        if self.pos.1 < y0 || self.pos.1 > y1 {
            self.pos.1 = if self.pos.1 < y0 { 2.0 * y0 - self.pos.1 } else { 2.0 * y1 - self.pos.1 };
            self.vel.1 = -self.vel.1;
        }
        self.pos = self.clamp(self.pos);
    }

    fn advance(&mut self, t: u64, dt_us: u64, rng: &mut ChaCha8Rng) {
        let dt = dt_us as f64 * 1e-6;
        match self.motion {
            Motion::Static { .. } => {}
            Motion::Linear { .. } => {
                self.pos.0 += self.vel.0 * dt;
                self.pos.1 += self.vel.1 * dt;
                self.reflect();
            }
            Motion::Natural(m) => match self.phase {
                Phase::Saccade { from, to, start, end } => {
                    let a = ((t - start) as f64 / (end - start) as f64).min(1.0);
                    // smoothstep velocity profile
                    let s = a * a * (3.0 - 2.0 * a);
                    self.pos = (from.0 + s * (to.0 - from.0), from.1 + s * (to.1 - from.1));
                    if t >= end {
                        let mean = m.mean_fixation_us.max(1) as f64;
                        let hold = Exp::new(1.0 / mean).expect("positive rate").sample(rng);
                        self.phase = Phase::Fixation { until: t + hold as u64 };
                        self.vel = (0.0, 0.0);
                    }
                }
                Phase::Fixation { until } => {
                    if t >= until {
                        self.phase = Phase::Drift;
                    }
                }
                Phase::Drift => {
                    if rng.random::<f64>() < m.saccade_rate_hz * dt {
                        let (a0, a1) = m.saccade_amplitude;
                        let amp = if a1 > a0 { rng.random_range(a0..a1) } else { a0 };
                        let ang = rng.random_range(0.0..std::f64::consts::TAU);
                        let to = self.clamp((self.pos.0 + amp * ang.cos(), self.pos.1 + amp * ang.sin()));
                        self.phase = Phase::Saccade {
                            from: self.pos,
                            to,
                            start: t - dt_us,
                            end: t - dt_us + m.saccade_duration_us,
                        };
                        self.advance(t, dt_us, rng);
                        return;
                    }
                    let noise = Normal::new(0.0, m.drift_sigma * dt.sqrt()).expect("finite sigma");
                    self.vel.0 += -m.drift_damping * self.vel.0 * dt + noise.sample(rng);
                    self.vel.1 += -m.drift_damping * self.vel.1 * dt + noise.sample(rng);
                    let speed = self.vel.0.hypot(self.vel.1);
                    if speed > m.max_drift_speed {
                        let k = m.max_drift_speed / speed;
                        self.vel = (self.vel.0 * k, self.vel.1 * k);
                    }
                    self.pos.0 += self.vel.0 * dt;
                    self.pos.1 += self.vel.1 * dt;
                    self.reflect();
                }
            },
        }
    }
}

fn coverage(px: f64, py: f64, c: (f64, f64), r: f64) -> f64 {
    let d = (px - c.0).hypot(py - c.1);
    (r + 0.5 - d).clamp(0.0, 1.0)
}

/// Renders `duration_us` of a recording. Deterministic given `config.seed`.
pub fn generate_synthetic_stream(config: &SyntheticSceneConfig, duration_us: u64) -> Result<SyntheticStream> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, SubSeed::Generation);
    let (w, h) = (config.width as usize, config.height as usize);
    let (r0, r1) = config.pupil_radius;
    let radius = if r1 > r0 { rng.random_range(r0..r1) } else { r0 };
    let margin = radius + 1.0;
    let bounds = ((margin, w as f64 - 1.0 - margin), (margin, h as f64 - 1.0 - margin));

    let mut mover = Mover { motion: &config.motion, bounds, pos: (0.0, 0.0), vel: (0.0, 0.0), phase: Phase::Drift };
    match &config.motion {
        Motion::Static { center } => mover.pos = mover.clamp(*center),
        Motion::Linear { start, velocity } => {
            mover.pos = mover.clamp(*start);
            mover.vel = *velocity;
        }
        Motion::Natural(_) => {
            mover.pos = (rng.random_range(bounds.0 .0..bounds.0 .1), rng.random_range(bounds.1 .0..bounds.1 .1));
        }
    }

    let (bg, pupil) = (config.background_level, config.pupil_level);
    let log_intensity = |px: usize, py: usize, c: (f64, f64)| {
        let cov = coverage(px as f64, py as f64, c, radius);
        (bg + (pupil - bg) * cov).ln()
    };
    let mut reference: Vec<f64> = (0..h * w).map(|i| log_intensity(i % w, i / w, mover.pos)).collect();

    let steps = (duration_us / config.step_us) as usize;
    let mut points = Vec::with_capacity(steps + 1);
    points.push(mover.pos);
    let mut events = Vec::new();
    let noise_mean = config.noise_rate_hz * (w * h) as f64 * config.step_us as f64 * 1e-6;
    let noise = (noise_mean > 0.0).then(|| Poisson::new(noise_mean).expect("positive mean"));
    let thr = config.event_threshold;
    let reach = radius + 2.0;
    let mut step_events: Vec<Event> = Vec::new();

    for k in 1..=steps {
        let t = k as u64 * config.step_us;
        let prev = mover.pos;
        mover.advance(t, config.step_us, &mut rng);
        let cur = mover.pos;
        points.push(cur);
        step_events.clear();

        let x_lo = (prev.0.min(cur.0) - reach).floor().max(0.0) as usize;
        let x_hi = ((prev.0.max(cur.0) + reach).ceil() as usize).min(w - 1);
        let y_lo = (prev.1.min(cur.1) - reach).floor().max(0.0) as usize;
        let y_hi = ((prev.1.max(cur.1) + reach).ceil() as usize).min(h - 1);
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let l = log_intensity(px, py, cur);
                let r = &mut reference[py * w + px];
                let diff = l - *r;
                let n = (diff.abs() / thr).floor() as u32;
                if n == 0 {
                    continue;
                }
                let p = if diff > 0.0 { Polarity::On } else { Polarity::Off };
                *r += p.sign() as f64 * thr * n as f64;
                for _ in 0..n {
                    step_events.push(Event::new(px as u16, py as u16, t, p));
                }
            }
        }
        if let Some(dist) = &noise {
            let n = dist.sample(&mut rng) as usize;
            for _ in 0..n {
                let px = rng.random_range(0..w) as u16;
                let py = rng.random_range(0..h) as u16;
                let p = if rng.random::<bool>() { Polarity::On } else { Polarity::Off };
                step_events.push(Event::new(px, py, t, p));
            }
            step_events.sort_by_key(|e| (e.y, e.x));
        }
        events.extend_from_slice(&step_events);
    }

    Ok(SyntheticStream { events, trajectory: Trajectory { step_us: config.step_us, points, radius } })
}

/// Convenience for tests and tools that need a config with a specific seed.
pub fn seeded(seed: u64) -> SyntheticSceneConfig {
    SyntheticSceneConfig { seed, ..Default::default() }
}
