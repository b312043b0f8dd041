use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use repseg_core::io::report::{EvalReport, FoldEval, RunEval, SweepRow};
use repseg_core::io::{
    load_checkpoint, read_dataset, write_json, Checkpoint, Dataset, FORMAT_VERSION,
};
use repseg_core::metrics::{
    confusion_matrix, count_loa, mean_std, sample_f1, segmental_iou_f1, ClassF1Report, LoaOptions,
    StdKind, DEFAULT_IOU_THRESHOLD,
};
use repseg_core::train::predict_recording;
use repseg_core::SegmentList;

use crate::train::check_compatible;
use crate::{DataError, UsageError};

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub data: PathBuf,
    /// Each entry is one run: a checkpoint file or a directory of them.
    pub checkpoints: Vec<PathBuf>,
    pub iou_threshold: f64,
    /// Score the ground truth against itself instead of a model.
    pub oracle: bool,
    pub loa: LoaOptions,
    pub report: Option<PathBuf>,
    /// Mask-ratio table as CSV.
    pub table: Option<PathBuf>,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            checkpoints: Vec::new(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            oracle: false,
            loa: LoaOptions::default(),
            report: None,
            table: None,
        }
    }
}

/// Checkpoint files of one run, sorted by name.
pub fn run_checkpoints(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_owned()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("reading {}", path.display()))?;
    files.retain(|p| p.extension().is_some_and(|e| e == "ckpt"));
    files.sort();
    if files.is_empty() {
        return Err(DataError(format!("no .ckpt files in {}", path.display())).into());
    }
    Ok(files)
}

/// Scores one subject; the truth is cut to the predicted length.
pub fn score_subject(
    subject: &str,
    truth: &[usize],
    pred: &[usize],
    n_classes: usize,
    threshold: f64,
) -> Result<(FoldEval, SegmentList, SegmentList)> {
    let truth = &truth[..pred.len()];
    let ts = SegmentList::from_labels(truth);
    let ps = SegmentList::from_labels(pred);
    let fold = FoldEval {
        held_out: subject.to_owned(),
        checkpoint: None,
        n_samples: pred.len(),
        sample_f1: sample_f1(truth, pred, n_classes)?,
        segmental_f1: segmental_iou_f1(&ts, &ps, threshold, n_classes)?,
        confusion: confusion_matrix(truth, pred, n_classes)?,
        epochs: Vec::new(),
    };
    Ok((fold, ts, ps))
}

struct Scored {
    folds: Vec<FoldEval>,
    segments: Vec<(String, SegmentList, SegmentList)>,
}

fn finish_run(
    name: String,
    first: Option<&Checkpoint>,
    scored: Scored,
    n_classes: usize,
    loa: LoaOptions,
) -> Result<RunEval> {
    let Scored { folds, segments } = scored;
    let n = folds.len() as f64;
    let samples: Vec<ClassF1Report> = folds.iter().map(|f| f.sample_f1.clone()).collect();
    let segmental: Vec<ClassF1Report> = folds.iter().map(|f| f.segmental_f1.clone()).collect();
    let pooled = |r: &[ClassF1Report]| {
        ClassF1Report::pooled(r).ok_or_else(|| DataError("no subjects scored".into()))
    };
    let loa = if segments.len() >= 2 {
        Some(count_loa(&segments, n_classes, loa)?)
    } else {
        None
    };
    let train = first.map(|c| &c.meta.train);
    Ok(RunEval {
        name,
        mask_ratio: train.map(|t| t.mask_ratio),
        eta: train.map(|t| t.eta),
        seed: train.map(|t| t.seed),
        model: first.map(|c| c.meta.model.clone()),
        train: train.cloned(),
        mean_sample_macro_f1: samples.iter().map(|r| r.macro_f1).sum::<f64>() / n,
        mean_segmental_macro_f1: segmental.iter().map(|r| r.macro_f1).sum::<f64>() / n,
        pooled_sample_f1: pooled(&samples)?,
        pooled_segmental_f1: pooled(&segmental)?,
        folds,
        loa,
    })
}

/// Ground truth scored against itself.
pub fn oracle_run(data: &Dataset, threshold: f64, loa: LoaOptions) -> Result<RunEval> {
    let n_classes = data.manifest.class_names.len();
    let mut scored = Scored {
        folds: Vec::new(),
        segments: Vec::new(),
    };
    for rec in &data.recordings {
        let (fold, t, p) = score_subject(
            &rec.subject_id,
            &rec.labels,
            &rec.labels,
            n_classes,
            threshold,
        )?;
        scored.folds.push(fold);
        scored.segments.push((rec.subject_id.clone(), t, p));
    }
    finish_run("oracle".into(), None, scored, n_classes, loa)
}

/// Every checkpoint of a run scored on its held-out subject, or on all
/// subjects when it was trained without one.
pub fn evaluate_run(
    data: &Dataset,
    path: &Path,
    threshold: f64,
    loa: LoaOptions,
) -> Result<RunEval> {
    let n_classes = data.manifest.class_names.len();
    let mut scored = Scored {
        folds: Vec::new(),
        segments: Vec::new(),
    };
    let mut first = None;
    for file in run_checkpoints(path)? {
        let ckpt = load_checkpoint(&file)?;
        check_compatible(data, ckpt.model.config())
            .with_context(|| format!("checkpoint {} does not match the dataset", file.display()))?;
        let subjects = match &ckpt.meta.held_out {
            Some(h) => vec![h.clone()],
            None => data.subject_ids(),
        };
        for id in subjects {
            let rec = data.recording(&id).ok_or_else(|| {
                DataError(format!("{}: subject {id} not in dataset", file.display()))
            })?;
            let pred = predict_recording(&ckpt.model, rec)?;
            let (mut fold, t, p) = score_subject(&id, &rec.labels, &pred, n_classes, threshold)?;
            fold.checkpoint = Some(file.display().to_string());
            fold.epochs = ckpt.meta.epochs.clone();
            scored.folds.push(fold);
            scored.segments.push((id, t, p));
        }
        if first.is_none() {
            first = Some(ckpt);
        }
    }
    let stem = if path.is_dir() {
        path.file_name()
    } else {
        path.file_stem()
    };
    let name = stem
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    finish_run(name, first.as_ref(), scored, n_classes, loa)
}

/// Runs grouped by mask ratio, one row per ratio in ascending order; the
/// spread is the population std across runs.
pub fn sweep_rows(runs: &[RunEval]) -> Vec<SweepRow> {
    let mut groups: BTreeMap<u64, Vec<&RunEval>> = BTreeMap::new();
    for r in runs {
        if let Some(m) = r.mask_ratio {
            groups.entry(m.to_bits()).or_default().push(r);
        }
    }
    let mut rows: Vec<SweepRow> = groups
        .into_values()
        .map(|g| {
            let f1: Vec<f64> = g.iter().map(|r| r.mean_sample_macro_f1).collect();
            let (mean, std) = mean_std(&f1, StdKind::Population);
            SweepRow {
                mask_ratio: g[0].mask_ratio.expect("grouped by ratio"),
                runs: g.len(),
                mean_sample_macro_f1: mean,
                std_sample_macro_f1: std,
                mean_segmental_macro_f1: g.iter().map(|r| r.mean_segmental_macro_f1).sum::<f64>()
                    / g.len() as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.mask_ratio.total_cmp(&b.mask_ratio));
    rows
}

pub fn write_sweep_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Scores `runs`, adds the sweep table and writes the requested outputs.
pub fn assemble_report(
    runs: Vec<RunEval>,
    opts: &EvaluateOptions,
    started: Instant,
) -> Result<EvalReport> {
    let sweep = if runs.len() > 1 {
        sweep_rows(&runs)
    } else {
        Vec::new()
    };
    let report = EvalReport {
        format_version: FORMAT_VERSION,
        iou_threshold: opts.iou_threshold,
        oracle: opts.oracle,
        runs,
        sweep,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    if let Some(p) = &opts.report {
        write_json(p, &report)?;
    }
    if let Some(p) = &opts.table {
        write_sweep_table(p, &report.sweep)?;
    }
    Ok(report)
}

pub fn run_evaluate(opts: &EvaluateOptions) -> Result<EvalReport> {
    let started = Instant::now();
    if !(0.0..=1.0).contains(&opts.iou_threshold) {
        return Err(UsageError(format!(
            "--iou-threshold must lie in [0, 1], got {}",
            opts.iou_threshold
        ))
        .into());
    }
    if opts.oracle == !opts.checkpoints.is_empty() {
        return Err(
            UsageError("pass either --oracle or at least one --checkpoints path".into()).into(),
        );
    }
    let data = read_dataset(&opts.data)?;
    let runs = if opts.oracle {
        vec![oracle_run(&data, opts.iou_threshold, opts.loa)?]
    } else {
        opts.checkpoints
            .iter()
            .map(|p| evaluate_run(&data, p, opts.iou_threshold, opts.loa))
            .collect::<Result<_>>()?
    };
    assemble_report(runs, opts, started)
}
