//! Brute-force references for the metrics, shared by several test targets.
#![allow(dead_code)]

use std::cmp::{Ordering, Reverse};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use repseg_core::{Segment, SegmentList};

pub const C: usize = 4;

pub fn random_labels(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    // runs, so that segments have realistic lengths
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let class = rng.gen_range(0..C);
        let run = rng.gen_range(1..12);
        out.extend(std::iter::repeat(class).take(run));
    }
    out.truncate(len);
    out
}

pub fn random_segments(rng: &mut ChaCha8Rng, max_per_class: usize) -> SegmentList {
    loop {
        let labels = random_labels(rng, 60);
        let segs = SegmentList::from_labels(&labels);
        if (1..C).all(|c| segs.count(c) <= max_per_class) {
            return segs;
        }
    }
}

pub fn counting_oracle(truth: &[usize], pred: &[usize], class: usize) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for i in 0..truth.len() {
        match (truth[i] == class, pred[i] == class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

pub fn f1_oracle(tp: usize, fp: usize, fn_: usize) -> f64 {
    // F1 = 2TP / (2TP + FP + FN), equal to the harmonic mean form
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

pub fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.start..a.end)
        .filter(|t| (b.start..b.end).contains(t))
        .count();
    let union = (a.start.min(b.start)..a.end.max(b.end))
        .filter(|t| (a.start..a.end).contains(t) || (b.start..b.end).contains(t))
        .count();
    inter as f64 / union as f64
}

pub type Key = (f64, Reverse<usize>, Reverse<usize>);

pub fn cmp_keys(a: &[Key], b: &[Key]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o =
            x.0.partial_cmp(&y.0)
                .unwrap()
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Every one-to-one matching over overlapping same-class pairs; keeps the
/// one whose descending key list is lexicographically largest.
pub fn best_matching(truth: &[Segment], pred: &[Segment]) -> Vec<(usize, usize)> {
    fn rec(
        i: usize,
        truth: &[Segment],
        pred: &[Segment],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        best: &mut (Vec<Key>, Vec<(usize, usize)>),
    ) {
        if i == truth.len() {
            let mut keys: Vec<Key> = cur
                .iter()
                .map(|&(t, p)| (iou(&truth[t], &pred[p]), Reverse(t), Reverse(p)))
                .collect();
            keys.sort_by(|a, b| cmp_keys(&[*b], &[*a]));
            if cmp_keys(&keys, &best.0) == Ordering::Greater {
                *best = (keys, cur.clone());
            }
            return;
        }
        rec(i + 1, truth, pred, used, cur, best);
        for j in 0..pred.len() {
            if !used[j] && truth[i].class == pred[j].class && iou(&truth[i], &pred[j]) > 0.0 {
                used[j] = true;
                cur.push((i, j));
                rec(i + 1, truth, pred, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (Vec::new(), Vec::new());
    rec(
        0,
        truth,
        pred,
        &mut vec![false; pred.len()],
        &mut Vec::new(),
        &mut best,
    );
    best.1
}

pub fn segment_oracle(
    truth: &SegmentList,
    pred: &SegmentList,
    threshold: f64,
) -> Vec<(usize, usize, usize)> {
    let (t, p) = (truth.as_slice(), pred.as_slice());
    let matching = best_matching(t, p);
    let mut out = vec![(0, 0, 0); C];
    for (ti, seg) in t.iter().enumerate() {
        match matching.iter().find(|m| m.0 == ti) {
            Some(&(_, pj)) => {
                let q = &p[pj];
                if iou(seg, q) >= threshold {
                    out[seg.class].0 += 1;
                } else if seg.len() < q.len() {
                    out[seg.class].1 += 1;
                } else {
                    out[seg.class].2 += 1;
                }
            }
            None => out[seg.class].2 += 1,
        }
    }
    for (pj, q) in p.iter().enumerate() {
        if !matching.iter().any(|m| m.1 == pj) {
            out[q.class].1 += 1;
        }
    }
    out
}

/// `(mean, population std)` of per-subject count differences for `class`.
pub fn loa_oracle(subjects: &[(String, SegmentList, SegmentList)], class: usize) -> (f64, f64) {
    let diffs: Vec<f64> = subjects
        .iter()
        .map(|(_, t, p)| {
            let count = |s: &SegmentList| s.iter().filter(|x| x.class == class).count() as f64;
            count(t) - count(p)
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
