//! Run-length view of per-sample labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::BACKGROUND;

/// Half-open span `[start, end)` of one foreground class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize, class: usize) -> Self {
        Self { start, end, class }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Number of samples shared with `other`.
    pub fn overlap(&self, other: &Segment) -> usize {
        self.end
            .min(other.end)
            .saturating_sub(self.start.max(other.start))
    }

    pub fn iou(&self, other: &Segment) -> f64 {
        let inter = self.overlap(other);
        let union = self.len() + other.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("segment {index} is empty")]
    Empty { index: usize },
    #[error("segment {index} overlaps or precedes its predecessor")]
    Unordered { index: usize },
    #[error("segment {index} continues the same class as its predecessor without a gap")]
    Unmerged { index: usize },
    #[error("segment {index} uses the background class")]
    Background { index: usize },
    #[error("segment ends at {end} beyond sequence length {len}")]
    OutOfBounds { end: usize, len: usize },
}

/// Ordered, non-overlapping, maximal foreground segments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct SegmentList(Vec<Segment>);

impl SegmentList {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SegmentError> {
        for (index, s) in segments.iter().enumerate() {
            if s.is_empty() {
                return Err(SegmentError::Empty { index });
            }
            if s.class == BACKGROUND {
                return Err(SegmentError::Background { index });
            }
            if index > 0 {
                let prev = &segments[index - 1];
                if s.start < prev.end {
                    return Err(SegmentError::Unordered { index });
                }
                if s.start == prev.end && s.class == prev.class {
                    return Err(SegmentError::Unmerged { index });
                }
            }
        }
        Ok(Self(segments))
    }

    /// Maximal constant-class runs of `labels`, background excluded.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut out = Vec::new();
        let mut start = 0;
        for t in 1..=labels.len() {
            if t == labels.len() || labels[t] != labels[start] {
                if labels[start] != BACKGROUND {
                    out.push(Segment::new(start, t, labels[start]));
                }
                start = t;
            }
        }
        Self(out)
    }

    /// Expands back to `len` per-sample labels; uncovered samples are
    /// background.
    pub fn to_labels(&self, len: usize) -> Result<Vec<usize>, SegmentError> {
        if let Some(last) = self.0.last() {
            if last.end > len {
                return Err(SegmentError::OutOfBounds { end: last.end, len });
            }
        }
        let mut labels = vec![BACKGROUND; len];
        for s in &self.0 {
            labels[s.start..s.end].fill(s.class);
        }
        Ok(labels)
    }

    pub fn as_slice(&self) -> &[Segment] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Segment> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn of_class(&self, class: usize) -> impl Iterator<Item = &Segment> {
        self.0.iter().filter(move |s| s.class == class)
    }

    pub fn count(&self, class: usize) -> usize {
        self.of_class(class).count()
    }

    /// Drops segments shorter than `min_len` samples.
    pub fn filter_min_len(&self, min_len: usize) -> Self {
        // removal can leave same-class neighbours separated by background,
        // which is still a valid list
        Self(
            self.0
                .iter()
                .copied()
                .filter(|s| s.len() >= min_len)
                .collect(),
        )
    }
}

impl TryFrom<Vec<Segment>> for SegmentList {
    type Error = SegmentError;

    fn try_from(v: Vec<Segment>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SegmentList> for Vec<Segment> {
    fn from(s: SegmentList) -> Self {
        s.0
    }
}

impl<'a> IntoIterator for &'a SegmentList {
    type Item = &'a Segment;
    type IntoIter = std::slice::Iter<'a, Segment>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn run_length_extraction() {
        let segs = SegmentList::from_labels(&[0, 0, 1, 1, 1, 0, 2]);
        assert_eq!(
            segs.as_slice(),
            &[Segment::new(2, 5, 1), Segment::new(6, 7, 2)]
        );
        assert!(SegmentList::from_labels(&[0, 0, 0]).is_empty());
        assert!(SegmentList::from_labels(&[]).is_empty());
    }

    #[test]
    fn validation_rules() {
        assert_eq!(
            SegmentList::new(vec![Segment::new(3, 3, 1)]),
            Err(SegmentError::Empty { index: 0 })
        );
        assert_eq!(
            SegmentList::new(vec![Segment::new(0, 4, 1), Segment::new(3, 6, 2)]),
            Err(SegmentError::Unordered { index: 1 })
        );
        assert_eq!(
            SegmentList::new(vec![Segment::new(0, 4, 1), Segment::new(4, 6, 1)]),
            Err(SegmentError::Unmerged { index: 1 })
        );
        assert!(SegmentList::new(vec![Segment::new(0, 4, 1), Segment::new(4, 6, 2)]).is_ok());
        assert!(SegmentList::new(vec![Segment::new(0, 2, 0)]).is_err());
    }

    #[test]
    fn iou_of_shifted_equal_segments() {
        let a = Segment::new(0, 8, 1);
        let b = Segment::new(4, 12, 1);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.iou(&Segment::new(8, 10, 1)), 0.0);
    }

    proptest! {
        #[test]
        fn labels_and_segments_are_dual(labels in prop::collection::vec(0usize..4, 0..60)) {
            let segs = SegmentList::from_labels(&labels);
            prop_assert!(SegmentList::new(segs.as_slice().to_vec()).is_ok());
            prop_assert_eq!(segs.to_labels(labels.len()).unwrap(), labels.clone());
            let again = SegmentList::from_labels(&segs.to_labels(labels.len()).unwrap());
            prop_assert_eq!(again, segs);
        }
    }
}
