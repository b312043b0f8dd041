use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::classes::*;

/// An exercise performed as a bout of repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exercise {
    HeelsUpDown,
    KneesFlexExt,
    TrunkFlexExt,
    /// Each repetition is a sit-to-stand followed by a stand-to-sit.
    ChairRising,
}

impl Exercise {
    pub fn name(self) -> &'static str {
        match self {
            Self::HeelsUpDown => "heels",
            Self::KneesFlexExt => "knees",
            Self::TrunkFlexExt => "trunk",
            Self::ChairRising => "chair",
        }
    }

    /// Labeled classes one repetition produces, in order.
    pub fn classes(self) -> &'static [usize] {
        match self {
            Self::HeelsUpDown => &[HEELS_UP_DOWN],
            Self::KneesFlexExt => &[KNEES_FLEX_EXT],
            Self::TrunkFlexExt => &[TRUNK_FLEX_EXT],
            Self::ChairRising => &[SIT_TO_STAND, STAND_TO_SIT],
        }
    }
}

impl FromStr for Exercise {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "heels" | "heels_up_down" => Ok(Self::HeelsUpDown),
            "knees" | "knees_flex_ext" => Ok(Self::KneesFlexExt),
            "trunk" | "trunk_flex_ext" => Ok(Self::TrunkFlexExt),
            "chair" | "chair_rising" | "sit_to_stand" => Ok(Self::ChairRising),
            other => Err(SynthError::Plan(format!("unknown exercise '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanBlock {
    pub exercise: Exercise,
    pub reps: usize,
}

/// Ordered bouts of one session, written as `heels:8,knees:8,chair:5`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SessionPlan {
    blocks: Vec<PlanBlock>,
}

impl SessionPlan {
    pub fn new(blocks: Vec<PlanBlock>) -> Result<Self, SynthError> {
        if blocks.is_empty() || blocks.iter().all(|b| b.reps == 0) {
            return Err(SynthError::EmptyPlan);
        }
        Ok(Self { blocks })
    }

    /// One bout of every exercise.
    pub fn standard() -> Self {
        "heels:8,knees:8,trunk:6,chair:5"
            .parse()
            .expect("valid plan")
    }

    pub fn blocks(&self) -> &[PlanBlock] {
        &self.blocks
    }

    /// Ground-truth segment count per class this plan produces.
    pub fn expected_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for b in &self.blocks {
            for &c in b.exercise.classes() {
                counts[c] += b.reps;
            }
        }
        counts
    }
}

impl FromStr for SessionPlan {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut blocks = Vec::new();
        for item in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (name, reps) = item
                .split_once(':')
                .ok_or_else(|| SynthError::Plan(format!("expected exercise:reps, got '{item}'")))?;
            let reps = reps
                .trim()
                .parse()
                .map_err(|_| SynthError::Plan(format!("bad repetition count in '{item}'")))?;
            blocks.push(PlanBlock {
                exercise: name.parse()?,
                reps,
            });
        }
        Self::new(blocks)
    }
}

impl fmt::Display for SessionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", b.exercise.name(), b.reps)?;
        }
        Ok(())
    }
}

impl TryFrom<String> for SessionPlan {
    type Error = SynthError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SessionPlan> for String {
    fn from(p: SessionPlan) -> Self {
        p.to_string()
    }
}
