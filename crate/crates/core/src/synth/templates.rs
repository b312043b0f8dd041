use serde::{Deserialize, Serialize};

use crate::classes::*;

/// Channel order of every recording.
pub const AX: usize = 0;
pub const AY: usize = 1;
pub const AZ: usize = 2;
pub const GX: usize = 3;
pub const GY: usize = 4;
pub const GZ: usize = 5;
pub const CHANNEL_NAMES: [&str; 6] = ["ax", "ay", "az", "gx", "gy", "gz"];

/// Longest repetition that still fits in one default window, seconds.
pub const MAX_REPETITION_S: f64 = 8.0;

/// `amplitude · sin(half_periods · π · u)` over the normalized repetition
/// time `u ∈ [0, 1]`. Every component starts and ends at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub channel: usize,
    pub amplitude: f64,
    pub half_periods: u32,
}

impl Component {
    pub const fn new(channel: usize, amplitude: f64, half_periods: u32) -> Self {
        Self {
            channel,
            amplitude,
            half_periods,
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        self.amplitude * (self.half_periods as f64 * std::f64::consts::PI * u).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityTemplate {
    pub class_id: usize,
    /// Active duration range in seconds.
    pub duration: (f64, f64),
    pub components: Vec<Component>,
    /// Extra movement jitter added on top of sensor noise, in units of the
    /// subject's accelerometer noise.
    pub jitter: f64,
}

impl ActivityTemplate {
    pub fn is_valid(&self) -> bool {
        let (lo, hi) = self.duration;
        lo > 0.0 && hi >= lo && (self.class_id == BACKGROUND || hi <= MAX_REPETITION_S)
    }

    /// Template signal for `n` samples at normalized times `(i + ½)/n`.
    pub fn render(&self, n: usize, amplitude_scale: f64) -> Vec<[f64; 6]> {
        (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                let mut row = [0.0; 6];
                for c in &self.components {
                    row[c.channel] += amplitude_scale * c.value(u);
                }
                row
            })
            .collect()
    }
}

/// Templates indexed by class id.
///
/// Channel `ax` is vertical. Chair rising is a single-period vertical
/// pulse (`+A sin 2πu` to stand up, `−A sin 2πu` to sit down), whose
/// velocity integral peaks at `A·D/π` mid-repetition.
pub fn default_templates() -> Vec<ActivityTemplate> {
    vec![
        ActivityTemplate {
            class_id: BACKGROUND,
            duration: (2.0, 4.0),
            components: Vec::new(),
            jitter: 0.0,
        },
        ActivityTemplate {
            class_id: HEELS_UP_DOWN,
            duration: (1.0, 2.0),
            components: vec![
                Component::new(AX, 1.2, 2),
                Component::new(AY, 0.3, 1),
                Component::new(GY, 12.0, 1),
            ],
            jitter: 1.0,
        },
        ActivityTemplate {
            class_id: KNEES_FLEX_EXT,
            duration: (1.5, 3.0),
            components: vec![
                Component::new(AX, 0.6, 2),
                Component::new(AY, 0.8, 1),
                Component::new(GX, 45.0, 2),
            ],
            jitter: 1.0,
        },
        ActivityTemplate {
            class_id: TRUNK_FLEX_EXT,
            duration: (2.0, 4.0),
            components: vec![
                Component::new(AX, -0.8, 1),
                Component::new(AY, 2.0, 1),
                Component::new(GY, 25.0, 2),
                Component::new(GZ, 6.0, 1),
            ],
            jitter: 1.0,
        },
        ActivityTemplate {
            class_id: SIT_TO_STAND,
            duration: (1.0, 3.0),
            components: vec![
                Component::new(AX, 2.5, 2),
                Component::new(AY, 1.2, 2),
                Component::new(GY, -30.0, 1),
            ],
            jitter: 1.0,
        },
        ActivityTemplate {
            class_id: STAND_TO_SIT,
            duration: (1.0, 3.0),
            components: vec![
                Component::new(AX, -2.5, 2),
                Component::new(AY, -1.0, 2),
                Component::new(GY, 30.0, 1),
            ],
            jitter: 1.0,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_valid_templates_in_class_order() {
        let t = default_templates();
        assert_eq!(t.len(), N_CLASSES);
        for (i, tpl) in t.iter().enumerate() {
            assert_eq!(tpl.class_id, i);
            assert!(tpl.is_valid());
        }
        assert!(t[BACKGROUND].components.is_empty());
    }

    #[test]
    fn repetitions_start_and_end_at_rest() {
        for tpl in default_templates() {
            for c in &tpl.components {
                assert!(c.value(0.0).abs() < 1e-12);
                assert!(c.value(1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn chair_rising_templates_are_mirrored_on_the_vertical_axis() {
        let t = default_templates();
        let up = t[SIT_TO_STAND]
            .components
            .iter()
            .find(|c| c.channel == AX)
            .unwrap();
        let down = t[STAND_TO_SIT]
            .components
            .iter()
            .find(|c| c.channel == AX)
            .unwrap();
        assert_eq!(up.amplitude, -down.amplitude);
        assert_eq!(up.half_periods, 2);
    }
}
