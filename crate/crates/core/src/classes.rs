//! Label vocabulary: five exercise repetitions plus background.

pub const BACKGROUND: usize = 0;
pub const HEELS_UP_DOWN: usize = 1;
pub const KNEES_FLEX_EXT: usize = 2;
pub const TRUNK_FLEX_EXT: usize = 3;
pub const SIT_TO_STAND: usize = 4;
pub const STAND_TO_SIT: usize = 5;

pub const N_CLASSES: usize = 6;

pub const CLASS_NAMES: [&str; N_CLASSES] = [
    "background",
    "heels_up_down",
    "knees_flex_ext",
    "trunk_flex_ext",
    "sit_to_stand",
    "stand_to_sit",
];

pub fn class_name(class: usize) -> &'static str {
    CLASS_NAMES.get(class).copied().unwrap_or("unknown")
}

pub fn is_chair_rising(class: usize) -> bool {
    class == SIT_TO_STAND || class == STAND_TO_SIT
}
