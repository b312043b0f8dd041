//! Parametric generator of labeled six-channel IMU recordings.
//!
//! A recording is a timeline of still rests and exercise bouts. Each
//! repetition renders its class template, scaled by the subject's amplitude
//! and tempo, on top of a gravity baseline and Gaussian sensor noise. Only
//! active repetition spans are labeled; gaps between repetitions are
//! background.

mod plan;
mod templates;

pub use plan::{Exercise, PlanBlock, SessionPlan};
pub use templates::{
    default_templates, ActivityTemplate, Component, AX, AY, AZ, CHANNEL_NAMES, GX, GY, GZ,
    MAX_REPETITION_S,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{BACKGROUND, N_CLASSES};
use crate::model::{SignalWindow, SAMPLE_RATE_HZ};
use crate::segments::SegmentList;
use crate::tensor::Tensor;

/// Magnitude of gravity used to split the baseline between `ax` and `ay`.
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("session plan has no repetitions")]
    EmptyPlan,
    #[error("bad plan: {0}")]
    Plan(String),
    #[error("invalid subject profile: {0}")]
    Profile(String),
    #[error("recording has {len} samples, shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("window length and stride must be positive")]
    ZeroWindow,
}

/// Per-subject variation applied on top of the templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub amplitude_scale: [f64; N_CLASSES],
    pub tempo_scale: [f64; N_CLASSES],
    /// Inter-repetition gap range, seconds.
    pub gap_s: (f64, f64),
    /// Gravity projection on the vertical accelerometer channel, m/s².
    pub gravity: f64,
    /// Accelerometer noise standard deviation, m/s².
    pub noise_sigma: f64,
    /// Gyroscope noise standard deviation, deg/s.
    pub gyro_noise_sigma: f64,
}

impl SubjectProfile {
    /// Unit scales, mid-range gravity.
    pub fn nominal(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            amplitude_scale: [1.0; N_CLASSES],
            tempo_scale: [1.0; N_CLASSES],
            gap_s: (0.4, 1.2),
            gravity: 9.5,
            noise_sigma: 0.03,
            gyro_noise_sigma: 0.5,
        }
    }

    pub fn random(subject_id: impl Into<String>, rng: &mut impl Rng) -> Self {
        let mut scale = || -> [f64; N_CLASSES] {
            let mut s = [1.0; N_CLASSES];
            for v in s.iter_mut().skip(1) {
                *v = rng.gen_range(0.7..1.3);
            }
            s
        };
        let amplitude_scale = scale();
        let tempo_scale = scale();
        let gap_lo = rng.gen_range(0.3..0.6);
        Self {
            subject_id: subject_id.into(),
            amplitude_scale,
            tempo_scale,
            gap_s: (gap_lo, gap_lo + rng.gen_range(0.4..0.9)),
            gravity: rng.gen_range(9.0..9.8),
            noise_sigma: rng.gen_range(0.02..0.05),
            gyro_noise_sigma: rng.gen_range(0.3..0.8),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Profile(m));
        let in_range = |v: &f64| (0.5..=1.5).contains(v);
        if !self.amplitude_scale.iter().all(in_range) || !self.tempo_scale.iter().all(in_range) {
            return bad("amplitude and tempo scales must lie in [0.5, 1.5]".into());
        }
        if !(9.0..=9.8).contains(&self.gravity) {
            return bad(format!("gravity {} outside [9.0, 9.8]", self.gravity));
        }
        if !(self.gap_s.0 > 0.0 && self.gap_s.1 >= self.gap_s.0) {
            return bad("gap range must be positive and ordered".into());
        }
        if !(self.noise_sigma >= 0.0 && self.gyro_noise_sigma >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        Ok(())
    }
}

/// One subject's continuous labeled session.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    /// `L×6` samples at 100 Hz.
    pub signal: Tensor,
    pub labels: Vec<usize>,
    pub segments: SegmentList,
}

impl Recording {
    /// Builds a recording from per-sample labels, deriving the segments.
    pub fn from_labels(subject_id: impl Into<String>, signal: Tensor, labels: Vec<usize>) -> Self {
        let segments = SegmentList::from_labels(&labels);
        Self {
            subject_id: subject_id.into(),
            signal,
            labels,
            segments,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples of one channel.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.signal
            .data()
            .iter()
            .skip(c)
            .step_by(self.signal.cols())
            .copied()
            .collect()
    }
}

/// A labeled window and the subject it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window: SignalWindow,
    pub labels: Vec<usize>,
    pub subject_id: String,
    pub start: usize,
}

/// Cuts fixed-length windows every `stride` samples; a tail shorter than
/// one window is dropped.
pub fn windowize(
    rec: &Recording,
    window_len: usize,
    stride: usize,
) -> Result<Vec<LabeledWindow>, SynthError> {
    if window_len == 0 || stride == 0 {
        return Err(SynthError::ZeroWindow);
    }
    if rec.len() < window_len {
        return Err(SynthError::TooShort {
            len: rec.len(),
            window: window_len,
        });
    }
    let n = rec.signal.cols();
    let mut out = Vec::new();
    let mut start = 0;
    while start + window_len <= rec.len() {
        let data = rec.signal.data()[start * n..(start + window_len) * n].to_vec();
        out.push(LabeledWindow {
            window: SignalWindow::new(Tensor::new(vec![window_len, n], data).expect("window")),
            labels: rec.labels[start..start + window_len].to_vec(),
            subject_id: rec.subject_id.clone(),
            start,
        });
        start += stride;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Span {
    class: usize,
    len: usize,
    /// Still rest between bouts (as opposed to a gap between repetitions).
    rest: bool,
}

fn seconds_to_samples(s: f64) -> usize {
    (s * SAMPLE_RATE_HZ).round().max(1.0) as usize
}

/// Renders recordings from templates.
#[derive(Debug, Clone)]
pub struct Generator {
    templates: Vec<ActivityTemplate>,
}

impl Default for Generator {
    fn default() -> Self {
        Self {
            templates: default_templates(),
        }
    }
}

impl Generator {
    pub fn new(templates: Vec<ActivityTemplate>) -> Result<Self, SynthError> {
        if templates.len() != N_CLASSES
            || templates
                .iter()
                .enumerate()
                .any(|(i, t)| t.class_id != i || !t.is_valid())
        {
            return Err(SynthError::Plan(
                "templates must cover every class in order with valid durations".into(),
            ));
        }
        Ok(Self { templates })
    }

    pub fn templates(&self) -> &[ActivityTemplate] {
        &self.templates
    }

    fn timeline(
        &self,
        profile: &SubjectProfile,
        plan: &SessionPlan,
        rng: &mut impl Rng,
    ) -> Vec<Span> {
        let rest = |rng: &mut dyn rand::RngCore| {
            let (lo, hi) = self.templates[BACKGROUND].duration;
            Span {
                class: BACKGROUND,
                len: seconds_to_samples(rng.gen_range(lo..=hi)),
                rest: true,
            }
        };
        let mut spans = vec![rest(rng)];
        for block in plan.blocks().iter().filter(|b| b.reps > 0) {
            for _ in 0..block.reps {
                for &class in block.exercise.classes() {
                    let (lo, hi) = self.templates[class].duration;
                    let seconds =
                        (rng.gen_range(lo..=hi) * profile.tempo_scale[class]).min(MAX_REPETITION_S);
                    spans.push(Span {
                        class,
                        len: seconds_to_samples(seconds),
                        rest: false,
                    });
                    let (g_lo, g_hi) = profile.gap_s;
                    spans.push(Span {
                        class: BACKGROUND,
                        len: seconds_to_samples(rng.gen_range(g_lo..=g_hi)),
                        rest: false,
                    });
                }
            }
            spans.push(rest(rng));
        }
        spans
    }

    /// Deterministic for a fixed `(profile, plan, seed)`.
    pub fn generate(
        &self,
        profile: &SubjectProfile,
        plan: &SessionPlan,
        seed: u64,
    ) -> Result<Recording, SynthError> {
        profile.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spans = self.timeline(profile, plan, &mut rng);
        let total: usize = spans.iter().map(|s| s.len).sum();

        let lateral = (GRAVITY * GRAVITY - profile.gravity * profile.gravity)
            .max(0.0)
            .sqrt();
        let accel_noise = Normal::new(0.0, profile.noise_sigma).expect("sigma >= 0");
        let gyro_noise = Normal::new(0.0, profile.gyro_noise_sigma).expect("sigma >= 0");

        let mut data = Vec::with_capacity(total * 6);
        let mut labels = Vec::with_capacity(total);
        for span in &spans {
            let tpl = &self.templates[span.class];
            let mut rows = tpl.render(span.len, profile.amplitude_scale[span.class]);
            if span.rest && rng.gen_bool(0.5) {
                // slow gyroscope drift while resting
                let drift = Component::new(rng.gen_range(GX..=GZ), rng.gen_range(1.0..3.0), 1);
                for (i, row) in rows.iter_mut().enumerate() {
                    row[drift.channel] += drift.value((i as f64 + 0.5) / span.len as f64);
                }
            }
            let jitter = Normal::new(0.0, tpl.jitter * profile.noise_sigma).expect("sigma >= 0");
            for row in rows {
                for (c, v) in row.iter().enumerate() {
                    let base = match c {
                        AX => profile.gravity,
                        AY => lateral,
                        _ => 0.0,
                    };
                    let noise = if c < GX {
                        accel_noise.sample(&mut rng) + jitter.sample(&mut rng)
                    } else {
                        gyro_noise.sample(&mut rng)
                    };
                    data.push(base + v + noise);
                }
                labels.push(span.class);
            }
        }

        let signal = Tensor::new(vec![total, 6], data).expect("signal shape");
        Ok(Recording::from_labels(
            profile.subject_id.clone(),
            signal,
            labels,
        ))
    }
}

/// Convenience wrapper around [`Generator::generate`] with default
/// templates.
pub fn generate_recording(
    profile: &SubjectProfile,
    plan: &SessionPlan,
    seed: u64,
) -> Result<Recording, SynthError> {
    Generator::default().generate(profile, plan, seed)
}

/// Subject profile, the seed its recording was drawn with, and the
/// recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub profile: SubjectProfile,
    pub seed: u64,
    pub recording: Recording,
}

/// `n` subjects `S01, S02, …` with random profiles, all derived from one
/// master seed.
pub fn generate_subjects(
    n: usize,
    seed: u64,
    plan: &SessionPlan,
) -> Result<Vec<SyntheticSubject>, SynthError> {
    let generator = Generator::default();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let profile = SubjectProfile::random(format!("S{:02}", i + 1), &mut master);
            let rec_seed = master.gen();
            let recording = generator.generate(&profile, plan, rec_seed)?;
            Ok(SyntheticSubject {
                profile,
                seed: rec_seed,
                recording,
            })
        })
        .collect()
}

/// Longest run of background samples that is a still rest (no gyroscope
/// activity); returned as `[start, end)`.
pub fn longest_background_run(rec: &Recording) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for t in 0..=rec.len() {
        let bg = t < rec.len() && rec.labels[t] == BACKGROUND;
        match (bg, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                if best.map_or(true, |(a, b)| t - s > b - a) {
                    best = Some((s, t));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::*;

    #[test]
    fn chair_plan_yields_paired_segments() {
        let plan: SessionPlan = "chair:5".parse().unwrap();
        let rec = generate_recording(&SubjectProfile::nominal("A"), &plan, 1).unwrap();
        assert_eq!(rec.segments.count(SIT_TO_STAND), 5);
        assert_eq!(rec.segments.count(STAND_TO_SIT), 5);
        assert_eq!(rec.segments.len(), 10);
        // strictly alternating
        for pair in rec.segments.as_slice().chunks(2) {
            assert_eq!(pair[0].class, SIT_TO_STAND);
            assert_eq!(pair[1].class, STAND_TO_SIT);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let plan = SessionPlan::standard();
        let p = SubjectProfile::nominal("A");
        let a = generate_recording(&p, &plan, 77).unwrap();
        let b = generate_recording(&p, &plan, 77).unwrap();
        assert_eq!(a, b);
        let c = generate_recording(&p, &plan, 78).unwrap();
        assert_ne!(a.signal, c.signal);
    }

    #[test]
    fn still_background_mean_is_gravity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..5 {
            let profile = SubjectProfile::random(format!("S{i}"), &mut rng);
            let rec = generate_recording(&profile, &SessionPlan::standard(), i).unwrap();
            let (s, e) = longest_background_run(&rec).unwrap();
            assert!(e - s >= 150);
            let ax = rec.channel(AX);
            let mean = ax[s..e].iter().sum::<f64>() / (e - s) as f64;
            assert!(
                (mean - profile.gravity).abs() < 0.05,
                "{mean} vs {}",
                profile.gravity
            );
        }
    }

    #[test]
    fn labels_and_segments_agree() {
        let rec =
            generate_recording(&SubjectProfile::nominal("A"), &SessionPlan::standard(), 3).unwrap();
        assert_eq!(rec.signal.rows(), rec.labels.len());
        assert_eq!(rec.segments.to_labels(rec.len()).unwrap(), rec.labels);
        assert_eq!(SegmentList::from_labels(&rec.labels), rec.segments);
        let expected = SessionPlan::standard().expected_counts();
        for c in 1..N_CLASSES {
            assert_eq!(rec.segments.count(c), expected[c]);
        }
    }

    #[test]
    fn standard_plan_windows_cover_every_class() {
        let rec =
            generate_recording(&SubjectProfile::nominal("A"), &SessionPlan::standard(), 4).unwrap();
        let windows = windowize(&rec, 800, 800).unwrap();
        for c in 0..N_CLASSES {
            assert!(
                windows.iter().any(|w| w.labels.contains(&c)),
                "class {c} missing"
            );
        }
    }

    #[test]
    fn windowize_counts_and_round_trip() {
        let mk = |len: usize| {
            let labels: Vec<usize> = (0..len).map(|t| (t / 300) % 3).collect();
            Recording::from_labels("A", Tensor::zeros(&[len, 6]), labels)
        };
        let rec = mk(2400);
        let w = windowize(&rec, 800, 800).unwrap();
        assert_eq!(w.len(), 3);
        let joined: Vec<usize> = w.iter().flat_map(|w| w.labels.clone()).collect();
        assert_eq!(joined, rec.labels);
        assert_eq!(windowize(&mk(2500), 800, 800).unwrap().len(), 3);
        assert!(matches!(
            windowize(&mk(500), 800, 800),
            Err(SynthError::TooShort {
                len: 500,
                window: 800
            })
        ));
    }

    #[test]
    fn profiles_scale_class_amplitudes() {
        let plan: SessionPlan = "heels:6,knees:6,trunk:6,chair:4".parse().unwrap();
        let a = SubjectProfile::nominal("A");
        let mut b = SubjectProfile::nominal("B");
        b.amplitude_scale = [1.0, 1.4, 0.6, 1.2, 0.8, 1.3];
        let ra = generate_recording(&a, &plan, 9).unwrap();
        let rb = generate_recording(&b, &plan, 9).unwrap();
        let mean_abs = |rec: &Recording, class: usize, ch: usize, base: f64| {
            let x = rec.channel(ch);
            let vals: Vec<f64> = rec
                .segments
                .of_class(class)
                .flat_map(|s| {
                    x[s.start..s.end]
                        .iter()
                        .map(|v| (v - base).abs())
                        .collect::<Vec<_>>()
                })
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let dominant = [0, GY, GX, GY, AX, AX];
        for class in 1..N_CLASSES {
            let ch = dominant[class];
            let base_a = if ch == AX { a.gravity } else { 0.0 };
            let base_b = if ch == AX { b.gravity } else { 0.0 };
            let ratio = mean_abs(&rb, class, ch, base_b) / mean_abs(&ra, class, ch, base_a);
            let target = b.amplitude_scale[class];
            assert!(
                (ratio / target - 1.0).abs() < 0.10,
                "class {class}: {ratio} vs {target}"
            );
        }
    }

    #[test]
    fn invalid_profile_rejected() {
        let mut p = SubjectProfile::nominal("A");
        p.gravity = 9.9;
        assert!(generate_recording(&p, &SessionPlan::standard(), 0).is_err());
        let mut p = SubjectProfile::nominal("A");
        p.tempo_scale[2] = 1.6;
        assert!(p.validate().is_err());
    }

    #[test]
    fn random_profiles_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..50 {
            SubjectProfile::random(format!("{i}"), &mut rng)
                .validate()
                .unwrap();
        }
    }

    #[test]
    fn subjects_are_reproducible() {
        let plan: SessionPlan = "heels:2,chair:1".parse().unwrap();
        let a = generate_subjects(3, 7, &plan).unwrap();
        let b = generate_subjects(3, 7, &plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[2].profile.subject_id, "S03");
    }
}
