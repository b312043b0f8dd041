//! JSON reports written by the command-line tools, with structural
//! validation beyond what deserialization enforces.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{read_json, IoError, FORMAT_VERSION};
use crate::metrics::{ClassF1Report, LoaReport};
use crate::model::ModelConfig;
use crate::train::{EpochRecord, TrainConfig};
use crate::velocity::StillWindow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedFold {
    pub held_out: Option<String>,
    pub train_subjects: Vec<String>,
    pub checkpoint: String,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainReport {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: Vec<TrainedFold>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldEval {
    pub held_out: String,
    pub checkpoint: Option<String>,
    pub n_samples: usize,
    pub sample_f1: ClassF1Report,
    pub segmental_f1: ClassF1Report,
    /// Rows are true classes, normalized to sum 1.
    pub confusion: Vec<Vec<f64>>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEval {
    pub name: String,
    pub mask_ratio: Option<f64>,
    pub eta: Option<f64>,
    pub seed: Option<u64>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub folds: Vec<FoldEval>,
    /// Mean over folds of the per-fold macro F1.
    pub mean_sample_macro_f1: f64,
    pub mean_segmental_macro_f1: f64,
    pub pooled_sample_f1: ClassF1Report,
    pub pooled_segmental_f1: ClassF1Report,
    pub loa: Option<LoaReport>,
}

/// One line of the mask-ratio table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub mask_ratio: f64,
    pub runs: usize,
    pub mean_sample_macro_f1: f64,
    pub std_sample_macro_f1: f64,
    pub mean_segmental_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format_version: u32,
    pub iou_threshold: f64,
    /// Ground truth scored against itself.
    pub oracle: bool,
    pub runs: Vec<RunEval>,
    pub sweep: Vec<SweepRow>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Predicted,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicsRow {
    pub class: usize,
    pub class_name: String,
    pub start: usize,
    pub end: usize,
    pub duration_s: f64,
    pub max_abs_velocity: f64,
    pub peak_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityReport {
    pub format_version: u32,
    pub subject: String,
    pub labels: LabelSource,
    pub checkpoint: Option<String>,
    pub n_samples: usize,
    pub still_windows: Vec<StillWindow>,
    pub repetitions: Vec<KinematicsRow>,
    pub trace: Vec<f64>,
    pub notice: Option<String>,
}

/// Structural checks of a parsed report.
pub trait Validate {
    fn problems(&self) -> Vec<String>;

    fn validate(&self) -> Result<(), String> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(p.join("; "))
        }
    }
}

const TOL: f64 = 1e-9;

fn version(v: u32, out: &mut Vec<String>) {
    if v != FORMAT_VERSION {
        out.push(format!("format_version {v}, expected {FORMAT_VERSION}"));
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

fn f1_report(what: &str, r: &ClassF1Report, out: &mut Vec<String>) {
    let mut present = Vec::new();
    for (c, s) in r.classes.iter().enumerate() {
        let Some(s) = s else { continue };
        if !(unit(s.precision) && unit(s.recall) && unit(s.f1)) {
            out.push(format!("{what}: class {c} score outside [0, 1]"));
        }
        let h = if s.precision + s.recall == 0.0 {
            0.0
        } else {
            2.0 * s.precision * s.recall / (s.precision + s.recall)
        };
        if (h - s.f1).abs() > TOL {
            out.push(format!("{what}: class {c} f1 is not the harmonic mean"));
        }
        present.push(s.f1);
    }
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    if (mean - r.macro_f1).abs() > TOL {
        out.push(format!("{what}: macro f1 disagrees with class scores"));
    }
}

fn confusion(what: &str, m: &[Vec<f64>], out: &mut Vec<String>) {
    for (i, row) in m.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if row.len() != m.len()
            || !(s.abs() < TOL || (s - 1.0).abs() < TOL)
            || row.iter().any(|&v| !unit(v))
        {
            out.push(format!("{what}: confusion row {i} is not normalized"));
        }
    }
}

fn loa(what: &str, r: &LoaReport, out: &mut Vec<String>) {
    for c in &r.classes {
        if c.pairs.len() < 2 {
            out.push(format!(
                "{what}: class {} LOA over fewer than 2 subjects",
                c.class
            ));
        }
        if (c.upper - c.mean - 2.0 * c.std).abs() > TOL
            || (c.mean - c.lower - 2.0 * c.std).abs() > TOL
        {
            out.push(format!(
                "{what}: class {} LOA interval is not mean ± 2·std",
                c.class
            ));
        }
    }
}

fn epochs(what: &str, e: &[EpochRecord], out: &mut Vec<String>) {
    if e.iter()
        .any(|r| !(r.loss.is_finite() && r.ce.is_finite() && r.mse.is_finite()))
    {
        out.push(format!("{what}: non-finite loss"));
    }
}

impl Validate for TrainReport {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        version(self.format_version, &mut out);
        if self.folds.is_empty() {
            out.push("no folds".into());
        }
        for f in &self.folds {
            let name = f.held_out.as_deref().unwrap_or("all");
            if let Some(h) = &f.held_out {
                if f.train_subjects.contains(h) {
                    out.push(format!(
                        "fold {h}: held-out subject among training subjects"
                    ));
                }
            }
            epochs(&format!("fold {name}"), &f.epochs, &mut out);
        }
        out
    }
}

impl Validate for EvalReport {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        version(self.format_version, &mut out);
        if !unit(self.iou_threshold) {
            out.push("iou_threshold outside [0, 1]".into());
        }
        for run in &self.runs {
            for f in &run.folds {
                let w = format!("{} / {}", run.name, f.held_out);
                f1_report(&w, &f.sample_f1, &mut out);
                f1_report(&w, &f.segmental_f1, &mut out);
                confusion(&w, &f.confusion, &mut out);
                epochs(&w, &f.epochs, &mut out);
            }
            f1_report(&run.name, &run.pooled_sample_f1, &mut out);
            f1_report(&run.name, &run.pooled_segmental_f1, &mut out);
            if let Some(l) = &run.loa {
                loa(&run.name, l, &mut out);
            }
            let n = run.folds.len().max(1) as f64;
            let mean = run.folds.iter().map(|f| f.sample_f1.macro_f1).sum::<f64>() / n;
            if (mean - run.mean_sample_macro_f1).abs() > TOL {
                out.push(format!(
                    "{}: mean sample macro f1 disagrees with folds",
                    run.name
                ));
            }
        }
        for row in &self.sweep {
            if !(unit(row.mask_ratio) && unit(row.mean_sample_macro_f1) && row.runs > 0) {
                out.push(format!("sweep row {} is invalid", row.mask_ratio));
            }
        }
        out
    }
}

impl Validate for VelocityReport {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        version(self.format_version, &mut out);
        if self.trace.len() != self.n_samples {
            out.push(format!(
                "trace has {} samples, expected {}",
                self.trace.len(),
                self.n_samples
            ));
        }
        for r in &self.repetitions {
            if !(r.start < r.end
                && r.end <= self.n_samples
                && (r.start..r.end).contains(&r.peak_at))
            {
                out.push(format!("repetition [{}, {}) out of range", r.start, r.end));
            }
            if (r.duration_s - (r.end - r.start) as f64 * crate::velocity::DT).abs() > TOL {
                out.push(format!(
                    "repetition [{}, {}) duration mismatch",
                    r.start, r.end
                ));
            }
        }
        if self.repetitions.is_empty() && self.notice.is_none() {
            out.push("empty kinematics without a notice".into());
        }
        out
    }
}

/// Reads a report and applies its structural validation.
pub fn read_report<T: DeserializeOwned + Validate>(path: &Path) -> Result<T, IoError> {
    let report: T = read_json(path)?;
    report.validate().map_err(|m| IoError::format(path, m))?;
    Ok(report)
}
