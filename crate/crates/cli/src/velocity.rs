use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use repseg_core::classes::{class_name, is_chair_rising};
use repseg_core::io::report::{KinematicsRow, LabelSource, VelocityReport};
use repseg_core::io::{load_checkpoint, read_dataset, write_json, FORMAT_VERSION};
use repseg_core::train::predict_recording;
use repseg_core::velocity::{analyze, VelocityParams};
use repseg_core::SegmentList;

use crate::train::{check_compatible, fold_checkpoint_name, SINGLE_CHECKPOINT};
use crate::{DataError, UsageError};

/// Vertical accelerometer axis.
const VERTICAL_CHANNEL: usize = 0;

#[derive(Debug, Clone, Default)]
pub struct VelocityOptions {
    pub data: PathBuf,
    pub subject: String,
    /// A checkpoint file, or a training directory in which the subject's
    /// held-out fold (else the single model) is used.
    pub checkpoint: Option<PathBuf>,
    pub use_true_labels: bool,
    pub params: VelocityParams,
    pub report: Option<PathBuf>,
}

fn pick_checkpoint(path: &Path, subject: &str) -> Result<PathBuf> {
    if !path.is_dir() {
        return Ok(path.to_owned());
    }
    [fold_checkpoint_name(subject), SINGLE_CHECKPOINT.to_owned()]
        .into_iter()
        .map(|n| path.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            DataError(format!(
                "{} holds neither {} nor {SINGLE_CHECKPOINT}",
                path.display(),
                fold_checkpoint_name(subject)
            ))
            .into()
        })
}

pub fn run_velocity(opts: &VelocityOptions) -> Result<VelocityReport> {
    if opts.use_true_labels == opts.checkpoint.is_some() {
        return Err(
            UsageError("pass exactly one of --checkpoint and --use-true-labels".into()).into(),
        );
    }
    let data = read_dataset(&opts.data)?;
    let rec = data
        .recording(&opts.subject)
        .ok_or_else(|| DataError(format!("subject {} not in dataset", opts.subject)))?;

    let (labels, source, checkpoint) = match &opts.checkpoint {
        None => (rec.labels.clone(), LabelSource::Truth, None),
        Some(path) => {
            let file = pick_checkpoint(path, &opts.subject)?;
            let ckpt = load_checkpoint(&file)?;
            check_compatible(&data, ckpt.model.config())?;
            let mut pred = predict_recording(&ckpt.model, rec)?;
            // the tail that does not fill a window is left as background
            pred.resize(rec.len(), 0);
            (
                pred,
                LabelSource::Predicted,
                Some(file.display().to_string()),
            )
        }
    };

    let segments = SegmentList::from_labels(&labels);
    let a_x = rec.channel(VERTICAL_CHANNEL);
    let analysis = analyze(&a_x, &segments, &opts.params)
        .with_context(|| format!("velocity analysis of subject {}", opts.subject))?;
    let notice = (!segments.iter().any(|s| is_chair_rising(s.class))).then(|| {
        format!(
            "subject {} has no {} chair-rising segments; kinematics are empty",
            opts.subject,
            match source {
                LabelSource::Predicted => "predicted",
                LabelSource::Truth => "labelled",
            }
        )
    });
    let report = VelocityReport {
        format_version: FORMAT_VERSION,
        subject: opts.subject.clone(),
        labels: source,
        checkpoint,
        n_samples: rec.len(),
        still_windows: analysis.bouts,
        repetitions: analysis
            .repetitions
            .iter()
            .map(|r| KinematicsRow {
                class: r.class,
                class_name: class_name(r.class).to_owned(),
                start: r.start,
                end: r.end,
                duration_s: r.duration_s,
                max_abs_velocity: r.max_abs_velocity,
                peak_at: r.peak_at,
            })
            .collect(),
        trace: analysis.trace,
        notice,
    };
    if let Some(p) = &opts.report {
        write_json(p, &report)?;
    }
    Ok(report)
}
