//! Chair-rising velocity from the vertical accelerometer channel.
//!
//! The channel is low-pass filtered, the gravity projection `g′` is
//! estimated over a still window, and `a − g′` is integrated forward from
//! the end of that window. Each chair-rising bout gets its own still window;
//! velocity is not re-zeroed between repetitions inside a bout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{is_chair_rising, SIT_TO_STAND, STAND_TO_SIT};
use crate::model::SAMPLE_RATE_HZ;
use crate::segments::{Segment, SegmentList};

pub const DT: f64 = 1.0 / SAMPLE_RATE_HZ;
pub const LOWPASS_CUTOFF_HZ: f64 = 20.0;
pub const MIN_STILL_LEN: usize = 50;
/// Largest accepted variance of a still window, (m/s²)².
pub const MAX_STILL_VARIANCE: f64 = 0.5;
/// Chair-rising segments closer than this many samples form one bout.
pub const DEFAULT_BOUT_GAP: usize = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VelocityError {
    #[error("still window [{start}, {end}) has {len} samples, need at least {min}")]
    WindowTooShort {
        start: usize,
        end: usize,
        len: usize,
        min: usize,
    },
    #[error("still window [{start}, {end}) is too dynamic: variance {variance:.4} ≥ {max}")]
    TooDynamic {
        start: usize,
        end: usize,
        variance: f64,
        max: f64,
    },
    #[error("window [{start}, {end}) exceeds signal length {len}")]
    OutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error(
        "no still window of {min} samples precedes the chair-rising bout at sample {bout_start}; \
         pass a manual still window"
    )]
    NoStillWindow { bout_start: usize, min: usize },
    #[error("still window [{start}, {end}) overlaps the bout [{bout_start}, {bout_end})")]
    StillOverlapsBout {
        start: usize,
        end: usize,
        bout_start: usize,
        bout_end: usize,
    },
    #[error("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")]
    Cutoff { cutoff: f64, nyquist: f64 },
}

/// Second-order section `y = b·[x_t, x_{t−1}, x_{t−2}] − a1·y_{t−1} − a2·y_{t−2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Second-order Butterworth low-pass by the bilinear transform with
    /// frequency prewarping.
    pub fn butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Result<Self, VelocityError> {
        let nyquist = sample_rate / 2.0;
        if !(cutoff > 0.0 && cutoff < nyquist) {
            return Err(VelocityError::Cutoff { cutoff, nyquist });
        }
        let k = (std::f64::consts::PI * cutoff / sample_rate).tan();
        let k2 = k * k;
        let norm = 1.0 + std::f64::consts::SQRT_2 * k + k2;
        let b0 = k2 / norm;
        Ok(Self {
            b: [b0, 2.0 * b0, b0],
            a1: 2.0 * (k2 - 1.0) / norm,
            a2: (1.0 - std::f64::consts::SQRT_2 * k + k2) / norm,
        })
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a1 + self.a2)
    }

    /// Magnitude response at `freq` Hz.
    pub fn gain_at(&self, freq: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq / sample_rate;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let num = (
            self.b[0] + self.b[1] * c1 + self.b[2] * c2,
            -self.b[1] * s1 - self.b[2] * s2,
        );
        let den = (
            1.0 + self.a1 * c1 + self.a2 * c2,
            -self.a1 * s1 - self.a2 * s2,
        );
        (num.0.hypot(num.1)) / (den.0.hypot(den.1))
    }

    /// Direct form II transposed, state initialised to the steady state of
    /// a constant input equal to `x[0]`.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let Some(&x0) = x.first() else {
            return Vec::new();
        };
        let [b0, b1, b2] = self.b;
        let y0 = self.dc_gain() * x0;
        let mut z2 = b2 * x0 - self.a2 * y0;
        let mut z1 = b1 * x0 - self.a1 * y0 + z2;
        x.iter()
            .map(|&xi| {
                let y = b0 * xi + z1;
                z1 = b1 * xi - self.a1 * y + z2;
                z2 = b2 * xi - self.a2 * y;
                y
            })
            .collect()
    }

    /// Zero-phase forward-backward filtering with odd reflection padding at
    /// both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = 9.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Zero-phase 20 Hz low-pass at the recording rate.
pub fn lowpass(x: &[f64]) -> Vec<f64> {
    Biquad::butterworth_lowpass(LOWPASS_CUTOFF_HZ, SAMPLE_RATE_HZ)
        .expect("cutoff below Nyquist")
        .filtfilt(x)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (mean, x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// Mean of `a_x` over a validated still window `[start, end)`.
pub fn estimate_gravity(a_x: &[f64], start: usize, end: usize) -> Result<f64, VelocityError> {
    if end > a_x.len() || start > end {
        return Err(VelocityError::OutOfBounds {
            start,
            end,
            len: a_x.len(),
        });
    }
    let len = end - start;
    if len < MIN_STILL_LEN {
        return Err(VelocityError::WindowTooShort {
            start,
            end,
            len,
            min: MIN_STILL_LEN,
        });
    }
    let (mean, variance) = mean_var(&a_x[start..end]);
    if variance >= MAX_STILL_VARIANCE {
        return Err(VelocityError::TooDynamic {
            start,
            end,
            variance,
            max: MAX_STILL_VARIANCE,
        });
    }
    Ok(mean)
}

/// `v[from] = 0`, `v[t] = v[t−1] + (a[t] − g′)·dt` for `t > from`; samples
/// before `from` are zero.
pub fn integrate_velocity(a: &[f64], gravity: f64, from: usize) -> Vec<f64> {
    let mut v = vec![0.0; a.len()];
    for t in from + 1..a.len() {
        v[t] = v[t - 1] + (a[t] - gravity) * DT;
    }
    v
}

/// Still window and gravity estimate used to initialise one bout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StillWindow {
    pub start: usize,
    pub end: usize,
    pub gravity: f64,
}

/// Lowest-variance `MIN_STILL_LEN`-sample window inside `[lo, hi)`; ties
/// go to the later window.
pub fn find_still_window(a_x: &[f64], lo: usize, hi: usize) -> Option<(usize, usize)> {
    let hi = hi.min(a_x.len());
    if hi < lo + MIN_STILL_LEN {
        return None;
    }
    (lo..=hi - MIN_STILL_LEN)
        .map(|s| (s, mean_var(&a_x[s..s + MIN_STILL_LEN]).1))
        .filter(|&(_, v)| v < MAX_STILL_VARIANCE)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(s, _)| (s, s + MIN_STILL_LEN))
}

/// Chair-rising segments grouped into bouts; segments separated by at most
/// `max_gap` samples share a bout.
pub fn chair_bouts(segments: &SegmentList, max_gap: usize) -> Vec<Vec<Segment>> {
    let mut bouts: Vec<Vec<Segment>> = Vec::new();
    for s in segments.iter().filter(|s| is_chair_rising(s.class)) {
        match bouts.last_mut() {
            Some(b) if s.start - b.last().expect("non-empty").end <= max_gap => b.push(*s),
            _ => bouts.push(vec![*s]),
        }
    }
    bouts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityParams {
    pub cutoff_hz: f64,
    pub bout_gap: usize,
    /// Manual still window `[start, end)`, applied to every bout it
    /// precedes in place of the automatic search.
    pub manual_still: Option<(usize, usize)>,
}

impl Default for VelocityParams {
    fn default() -> Self {
        Self {
            cutoff_hz: LOWPASS_CUTOFF_HZ,
            bout_gap: DEFAULT_BOUT_GAP,
            manual_still: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionKinematics {
    pub class: usize,
    pub start: usize,
    pub end: usize,
    pub duration_s: f64,
    pub max_abs_velocity: f64,
    /// Sample index of the maximum.
    pub peak_at: usize,
    pub trace: Vec<f64>,
}

/// Duration and peak `|v|` for every chair-rising segment.
pub fn per_repetition_kinematics(
    velocity: &[f64],
    segments: &[Segment],
) -> Result<Vec<RepetitionKinematics>, VelocityError> {
    segments
        .iter()
        .filter(|s| s.class == SIT_TO_STAND || s.class == STAND_TO_SIT)
        .map(|s| {
            if s.end > velocity.len() {
                return Err(VelocityError::OutOfBounds {
                    start: s.start,
                    end: s.end,
                    len: velocity.len(),
                });
            }
            let trace = velocity[s.start..s.end].to_vec();
            let (i, peak) = trace.iter().map(|v| v.abs()).enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );
            Ok(RepetitionKinematics {
                class: s.class,
                start: s.start,
                end: s.end,
                duration_s: s.len() as f64 * DT,
                max_abs_velocity: peak,
                peak_at: s.start + i,
                trace,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityAnalysis {
    /// Same length as the recording; zero outside integrated bouts.
    pub trace: Vec<f64>,
    pub bouts: Vec<StillWindow>,
    pub repetitions: Vec<RepetitionKinematics>,
}

/// Full pipeline on the vertical channel, keyed by `segments` (any
/// classes; only chair rising is analysed, the rest bound the still-window
/// search).
pub fn analyze(
    a_x: &[f64],
    segments: &SegmentList,
    params: &VelocityParams,
) -> Result<VelocityAnalysis, VelocityError> {
    let filter = Biquad::butterworth_lowpass(params.cutoff_hz, SAMPLE_RATE_HZ)?;
    let filtered = filter.filtfilt(a_x);
    let mut trace = vec![0.0; a_x.len()];
    let mut bouts = Vec::new();
    let mut repetitions = Vec::new();

    for bout in chair_bouts(segments, params.bout_gap) {
        let bout_start = bout[0].start;
        let bout_end = bout.last().expect("non-empty").end;
        if bout_end > a_x.len() {
            return Err(VelocityError::OutOfBounds {
                start: bout_start,
                end: bout_end,
                len: a_x.len(),
            });
        }
        let (start, end) = match params.manual_still {
            Some((s, e)) if e <= bout_start => (s, e),
            Some((s, e)) if s < bout_end => {
                return Err(VelocityError::StillOverlapsBout {
                    start: s,
                    end: e,
                    bout_start,
                    bout_end,
                })
            }
            // bouts before the manual window fall back to the search
            _ => {
                // the background run right before the bout
                let lo = segments
                    .iter()
                    .filter(|s| s.end <= bout_start)
                    .map(|s| s.end)
                    .max()
                    .unwrap_or(0);
                find_still_window(&filtered, lo, bout_start).ok_or(
                    VelocityError::NoStillWindow {
                        bout_start,
                        min: MIN_STILL_LEN,
                    },
                )?
            }
        };
        let gravity = estimate_gravity(&filtered, start, end)?;
        let v = integrate_velocity(&filtered[..bout_end], gravity, end - 1);
        trace[end - 1..bout_end].copy_from_slice(&v[end - 1..bout_end]);
        bouts.push(StillWindow {
            start,
            end,
            gravity,
        });
        repetitions.extend(per_repetition_kinematics(&trace, &bout)?);
    }
    Ok(VelocityAnalysis {
        trace,
        bouts,
        repetitions,
    })
}
