//! Mask-ratio sweep: LOSOCV training for every (ratio, seed) pair, then
//! evaluation of each run and the ratio table.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use repseg_core::io::report::{EvalReport, TrainReport};
use repseg_core::io::{read_dataset, write_json, FORMAT_VERSION};
use repseg_core::metrics::LoaOptions;

use crate::evaluate::{assemble_report, evaluate_run, EvaluateOptions};
use crate::train::{check_compatible, plan_jobs, run_jobs, TRAIN_REPORT_FILE};
use crate::{RunConfig, UsageError};

pub const DEFAULT_RATIOS: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9];
pub const SWEEP_REPORT_FILE: &str = "sweep_report.json";
pub const SWEEP_TABLE_FILE: &str = "sweep_table.csv";

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub data: PathBuf,
    pub base: RunConfig,
    /// `(mask ratio, seed)` of every run.
    pub runs: Vec<(f64, u64)>,
    pub out: PathBuf,
    pub jobs: usize,
    pub iou_threshold: f64,
}

/// Every ratio with every seed, ratios outermost.
pub fn grid(ratios: &[f64], seeds: &[u64]) -> Vec<(f64, u64)> {
    ratios
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect()
}

pub fn run_dir(out: &Path, ratio: f64, seed: u64) -> PathBuf {
    out.join(format!("ratio-{ratio}-seed-{seed}"))
}

pub fn run_sweep(opts: &SweepOptions) -> Result<EvalReport> {
    let started = Instant::now();
    if opts.runs.is_empty() {
        return Err(UsageError("sweep needs at least one ratio and one seed".into()).into());
    }
    let configs: Vec<RunConfig> = opts
        .runs
        .iter()
        .map(|&(mask_ratio, seed)| {
            let mut c = opts.base.clone();
            c.train.mask_ratio = mask_ratio;
            c.train.seed = seed;
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let data = read_dataset(&opts.data)?;
    check_compatible(&data, &opts.base.model)?;

    // all folds of all runs share one pool
    let mut jobs = Vec::new();
    let mut spans = Vec::new();
    for (c, &(r, s)) in configs.iter().zip(&opts.runs) {
        let planned = plan_jobs(&data, c, &run_dir(&opts.out, r, s), true)?;
        spans.push(jobs.len()..jobs.len() + planned.len());
        jobs.extend(planned);
    }
    let mut folds = run_jobs(&data, &jobs, opts.jobs)?;

    let mut runs = Vec::new();
    for ((c, &(r, s)), span) in configs.iter().zip(&opts.runs).zip(spans).rev() {
        let dir = run_dir(&opts.out, r, s);
        let run_folds: Vec<_> = folds.drain(span).collect();
        let report = TrainReport {
            format_version: FORMAT_VERSION,
            model: c.model.clone(),
            train: c.train.clone(),
            wall_clock_s: run_folds.iter().map(|f| f.wall_clock_s).sum(),
            folds: run_folds,
        };
        write_json(&dir.join(TRAIN_REPORT_FILE), &report)?;
        runs.push(evaluate_run(
            &data,
            &dir,
            opts.iou_threshold,
            LoaOptions::default(),
        )?);
    }
    runs.reverse();

    let eval = EvaluateOptions {
        data: opts.data.clone(),
        checkpoints: runs.iter().map(|r| PathBuf::from(&r.name)).collect(),
        iou_threshold: opts.iou_threshold,
        report: Some(opts.out.join(SWEEP_REPORT_FILE)),
        table: Some(opts.out.join(SWEEP_TABLE_FILE)),
        ..EvaluateOptions::default()
    };
    assemble_report(runs, &eval, started)
}
