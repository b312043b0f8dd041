use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use repseg_core::io::report::{TrainReport, TrainedFold};
use repseg_core::io::{
    read_dataset, save_checkpoint, write_json, CheckpointMeta, Dataset, FORMAT_VERSION,
};
use repseg_core::synth::{windowize, LabeledWindow};
use repseg_core::train::{make_losocv, train_fold, Fold};
use repseg_core::{Model, ModelConfig};

use crate::{DataError, RunConfig, UsageError};

pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const SINGLE_CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub data: PathBuf,
    pub config: RunConfig,
    /// Directory receiving the checkpoints.
    pub out: PathBuf,
    pub losocv: bool,
    pub jobs: usize,
    /// Defaults to `train_report.json` inside `out`.
    pub report: Option<PathBuf>,
}

pub fn fold_checkpoint_name(held_out: &str) -> String {
    format!("fold-{held_out}.ckpt")
}

/// Fails unless the dataset's channels and classes fit the model.
pub fn check_compatible(data: &Dataset, model: &ModelConfig) -> Result<()> {
    let m = &data.manifest;
    let mut problems = Vec::new();
    if m.channels.len() != model.n_channels {
        problems.push(format!(
            "dataset has {} channels, model expects {}",
            m.channels.len(),
            model.n_channels
        ));
    }
    if m.class_names.len() != model.n_classes {
        problems.push(format!(
            "dataset has {} classes, model expects {}",
            m.class_names.len(),
            model.n_classes
        ));
    }
    for r in &data.recordings {
        if r.len() < model.window_len {
            problems.push(format!(
                "subject {} has {} samples, shorter than the window of {}",
                r.subject_id,
                r.len(),
                model.window_len
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(DataError(problems.join("; ")).into())
    }
}

/// Non-overlapping windows of every subject in `ids`.
pub fn subject_windows(
    data: &Dataset,
    ids: &[String],
    window_len: usize,
) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    for id in ids {
        let rec = data
            .recording(id)
            .ok_or_else(|| DataError(format!("subject {id} not in dataset")))?;
        out.extend(windowize(rec, window_len, window_len)?);
    }
    Ok(out)
}

/// One unit of training work: a configuration, a fold and where its
/// checkpoint goes.
#[derive(Debug, Clone)]
pub struct FoldJob {
    pub config: RunConfig,
    pub fold: Fold,
    pub held_out: Option<String>,
    pub checkpoint: PathBuf,
}

pub fn plan_jobs(
    data: &Dataset,
    config: &RunConfig,
    out: &Path,
    losocv: bool,
) -> Result<Vec<FoldJob>> {
    let ids = data.subject_ids();
    if losocv {
        let plan = make_losocv(&ids)?;
        Ok(plan
            .folds
            .into_iter()
            .map(|fold| FoldJob {
                config: config.clone(),
                held_out: Some(fold.held_out.clone()),
                checkpoint: out.join(fold_checkpoint_name(&fold.held_out)),
                fold,
            })
            .collect())
    } else {
        Ok(vec![FoldJob {
            config: config.clone(),
            fold: Fold {
                held_out: String::new(),
                train: ids,
            },
            held_out: None,
            checkpoint: out.join(SINGLE_CHECKPOINT),
        }])
    }
}

pub fn run_job(data: &Dataset, job: &FoldJob) -> Result<TrainedFold> {
    let started = Instant::now();
    let cfg = &job.config;
    let name = job.held_out.as_deref().unwrap_or("all");
    let windows = subject_windows(data, &job.fold.train, cfg.model.window_len)?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let history = train_fold(&mut model, &windows, &cfg.train)
        .with_context(|| format!("training fold {name}"))?;
    let meta = CheckpointMeta {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        held_out: job.held_out.clone(),
        train_subjects: job.fold.train.clone(),
        epochs: history.epochs.clone(),
    };
    if let Some(dir) = job.checkpoint.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(&job.checkpoint, &meta, &model)?;
    Ok(TrainedFold {
        held_out: job.held_out.clone(),
        train_subjects: job.fold.train.clone(),
        checkpoint: job.checkpoint.display().to_string(),
        epochs: history.epochs,
        stopped_early: history.stopped_early,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Runs `jobs` on a pool of `threads` workers; results keep job order.
pub fn run_jobs(data: &Dataset, jobs: &[FoldJob], threads: usize) -> Result<Vec<TrainedFold>> {
    if threads == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting worker pool")?;
    pool.install(|| jobs.par_iter().map(|j| run_job(data, j)).collect())
}

pub fn run_train(opts: &TrainOptions) -> Result<TrainReport> {
    let started = Instant::now();
    opts.config.validate()?;
    let data = read_dataset(&opts.data)?;
    check_compatible(&data, &opts.config.model)?;
    let jobs = plan_jobs(&data, &opts.config, &opts.out, opts.losocv)?;
    let folds = run_jobs(&data, &jobs, opts.jobs)?;
    let report = TrainReport {
        format_version: FORMAT_VERSION,
        model: opts.config.model.clone(),
        train: opts.config.train.clone(),
        folds,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let path = opts
        .report
        .clone()
        .unwrap_or_else(|| opts.out.join(TRAIN_REPORT_FILE));
    write_json(&path, &report)?;
    Ok(report)
}
