//! Sample-wise F1, segmental IoU F1, repetition-count limits of agreement
//! and confusion matrices.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segments::{Segment, SegmentList};

/// Minimum IoU for a matched segment pair to count as a true positive.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("truth has {truth} samples but prediction has {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} is outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("limits of agreement need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("IoU threshold {0} outside [0, 1]")]
    Threshold(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl ClassScore {
    /// Scores from raw counts; an empty denominator scores 0.
    pub fn from_counts(counts: Counts) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            counts,
        }
    }
}

/// Per-class scores. A class that occurs in neither truth nor prediction
/// is `None` and left out of the macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1Report {
    pub classes: Vec<Option<ClassScore>>,
    pub macro_f1: f64,
}

impl ClassF1Report {
    pub fn from_counts(counts: &[Counts]) -> Self {
        let classes: Vec<Option<ClassScore>> = counts
            .iter()
            .map(|c| (c.tp + c.fp + c.fn_ > 0).then(|| ClassScore::from_counts(*c)))
            .collect();
        let present: Vec<f64> = classes.iter().flatten().map(|s| s.f1).collect();
        let macro_f1 = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        Self { classes, macro_f1 }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, class: usize) -> Option<&ClassScore> {
        self.classes.get(class).and_then(Option::as_ref)
    }

    pub fn f1(&self, class: usize) -> Option<f64> {
        self.get(class).map(|s| s.f1)
    }

    pub fn counts(&self) -> Vec<Counts> {
        self.classes
            .iter()
            .map(|c| c.map(|s| s.counts).unwrap_or_default())
            .collect()
    }

    /// Sums counts across reports (e.g. folds) and rescores.
    pub fn pooled(reports: &[ClassF1Report]) -> Option<Self> {
        let n = reports.first()?.n_classes();
        let mut total = vec![Counts::default(); n];
        for r in reports {
            for (t, c) in total.iter_mut().zip(r.counts()) {
                t.tp += c.tp;
                t.fp += c.fp;
                t.fn_ += c.fn_;
            }
        }
        Some(Self::from_counts(&total))
    }
}

fn check_labels(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<(), MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if let Some(&label) = truth.iter().chain(pred).find(|&&l| l >= n_classes) {
        return Err(MetricsError::LabelOutOfRange { label, n_classes });
    }
    Ok(())
}

/// One-vs-rest counts over samples for every class, background included.
pub fn sample_f1(
    truth: &[usize],
    pred: &[usize],
    n_classes: usize,
) -> Result<ClassF1Report, MetricsError> {
    let m = confusion_counts(truth, pred, n_classes)?;
    let counts: Vec<Counts> = (0..n_classes)
        .map(|c| Counts {
            tp: m[c][c],
            fp: (0..n_classes).filter(|&r| r != c).map(|r| m[r][c]).sum(),
            fn_: (0..n_classes).filter(|&p| p != c).map(|p| m[c][p]).sum(),
        })
        .collect();
    Ok(ClassF1Report::from_counts(&counts))
}

/// Raw counts; row is the true class, column the predicted class.
pub fn confusion_counts(
    truth: &[usize],
    pred: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<usize>>, MetricsError> {
    check_labels(truth, pred, n_classes)?;
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Confusion matrix normalized over each true class; rows without support
/// stay zero.
pub fn confusion_matrix(
    truth: &[usize],
    pred: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    Ok(normalize_rows(&confusion_counts(truth, pred, n_classes)?))
}

pub fn normalize_rows(counts: &[Vec<usize>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&v| {
                    if total == 0 {
                        0.0
                    } else {
                        v as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// A truth/prediction pairing produced by segment matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub truth: usize,
    pub pred: usize,
    pub iou: f64,
}

/// Greedy one-to-one matching of same-class segments.
///
/// Candidate pairs are those with positive overlap. They are taken in
/// order of decreasing IoU (ties: lower truth index, then lower prediction
/// index) whenever neither side is already used.
pub fn match_segments(truth: &[Segment], pred: &[Segment]) -> Vec<MatchedPair> {
    let mut candidates = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            if t.class == p.class && t.overlap(p) > 0 {
                candidates.push(MatchedPair {
                    truth: i,
                    pred: j,
                    iou: t.iou(p),
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .partial_cmp(&a.iou)
            .unwrap_or(Ordering::Equal)
            .then(a.truth.cmp(&b.truth))
            .then(a.pred.cmp(&b.pred))
    });
    let mut truth_used = vec![false; truth.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut out = Vec::new();
    for c in candidates {
        if !truth_used[c.truth] && !pred_used[c.pred] {
            truth_used[c.truth] = true;
            pred_used[c.pred] = true;
            out.push(c);
        }
    }
    out
}

/// Segment-level counts for a given matching.
///
/// A pair at or above `threshold` is a TP. Below it, the pair is an FP when
/// the true segment is shorter than the predicted one and an FN otherwise
/// (equal lengths included). Unmatched predictions are FPs and unmatched
/// truths FNs.
pub fn score_matching(
    truth: &[Segment],
    pred: &[Segment],
    pairs: &[MatchedPair],
    threshold: f64,
    n_classes: usize,
) -> Vec<Counts> {
    let mut counts = vec![Counts::default(); n_classes];
    let mut truth_used = vec![false; truth.len()];
    let mut pred_used = vec![false; pred.len()];
    for p in pairs {
        truth_used[p.truth] = true;
        pred_used[p.pred] = true;
        let (t, q) = (&truth[p.truth], &pred[p.pred]);
        let c = &mut counts[t.class];
        if p.iou >= threshold {
            c.tp += 1;
        } else if t.len() < q.len() {
            c.fp += 1;
        } else {
            c.fn_ += 1;
        }
    }
    for (t, _) in truth.iter().zip(&truth_used).filter(|(_, &u)| !u) {
        counts[t.class].fn_ += 1;
    }
    for (q, _) in pred.iter().zip(&pred_used).filter(|(_, &u)| !u) {
        counts[q.class].fp += 1;
    }
    counts
}

/// Segment-wise F1 at an IoU threshold.
pub fn segmental_iou_f1(
    truth: &SegmentList,
    pred: &SegmentList,
    threshold: f64,
    n_classes: usize,
) -> Result<ClassF1Report, MetricsError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::Threshold(threshold.to_string()));
    }
    if let Some(s) = truth
        .iter()
        .chain(pred.iter())
        .find(|s| s.class >= n_classes)
    {
        return Err(MetricsError::LabelOutOfRange {
            label: s.class,
            n_classes,
        });
    }
    let (t, p) = (truth.as_slice(), pred.as_slice());
    let pairs = match_segments(t, p);
    Ok(ClassF1Report::from_counts(&score_matching(
        t, p, &pairs, threshold, n_classes,
    )))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LoaOptions {
    pub std: StdKind,
    /// Predicted segments shorter than this many samples are not counted.
    /// Zero keeps every fragment.
    pub min_pred_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCount {
    pub subject: String,
    pub true_count: usize,
    pub pred_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLoa {
    pub class: usize,
    /// Mean of `true_count − pred_count`.
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
    pub pairs: Vec<SubjectCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoaReport {
    pub std_kind: StdKind,
    pub classes: Vec<ClassLoa>,
}

impl LoaReport {
    pub fn class(&self, class: usize) -> Option<&ClassLoa> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// Mean and standard deviation of a sample.
pub fn mean_std(values: &[f64], kind: StdKind) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match kind {
        StdKind::Population => n,
        StdKind::Sample => n - 1.0,
    };
    (mean, (ss / denom).sqrt())
}

/// Limits of agreement `mean ± 2·std` of per-subject repetition-count
/// differences, for every foreground class `1..n_classes`.
///
/// `subjects` holds `(subject id, truth, prediction)`; the result is
/// independent of its order.
pub fn count_loa(
    subjects: &[(String, SegmentList, SegmentList)],
    n_classes: usize,
    options: LoaOptions,
) -> Result<LoaReport, MetricsError> {
    if subjects.len() < 2 {
        return Err(MetricsError::TooFewSubjects(subjects.len()));
    }
    let mut sorted: Vec<&(String, SegmentList, SegmentList)> = subjects.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let classes = (1..n_classes)
        .map(|class| {
            let pairs: Vec<SubjectCount> = sorted
                .iter()
                .map(|(id, t, p)| SubjectCount {
                    subject: id.clone(),
                    true_count: t.count(class),
                    pred_count: p
                        .of_class(class)
                        .filter(|s| s.len() >= options.min_pred_len)
                        .count(),
                })
                .collect();
            let diffs: Vec<f64> = pairs
                .iter()
                .map(|p| p.true_count as f64 - p.pred_count as f64)
                .collect();
            let (mean, std) = mean_std(&diffs, options.std);
            ClassLoa {
                class,
                mean,
                std,
                lower: mean - 2.0 * std,
                upper: mean + 2.0 * std,
                pairs,
            }
        })
        .collect();
    Ok(LoaReport {
        std_kind: options.std,
        classes,
    })
}

/// Per-class repetition counts of a segment list.
pub fn repetition_counts(segments: &SegmentList) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for s in segments {
        *m.entry(s.class).or_insert(0) += 1;
    }
    m
}
