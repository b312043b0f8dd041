use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use repseg_cli::evaluate::{run_evaluate, EvaluateOptions};
use repseg_cli::generate::{count_table, run_generate, GenerateOptions};
use repseg_cli::sweep::{
    grid, run_sweep, SweepOptions, DEFAULT_RATIOS, SWEEP_REPORT_FILE, SWEEP_TABLE_FILE,
};
use repseg_cli::train::{run_train, TrainOptions};
use repseg_cli::velocity::{run_velocity, VelocityOptions};
use repseg_cli::{exit_code, Overrides, Preset, RunConfig, UsageError};
use repseg_core::io::report::EvalReport;
use repseg_core::metrics::{LoaOptions, StdKind, DEFAULT_IOU_THRESHOLD};
use repseg_core::synth::SessionPlan;
use repseg_core::velocity::{VelocityParams, DEFAULT_BOUT_GAP, LOWPASS_CUTOFF_HZ};

/// Exercise segmentation from a shank-worn IMU: synthetic data, masked
/// self-supervised training, evaluation and chair-rising velocity.
#[derive(Parser)]
#[command(name = "repseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and print its segment counts.
    Generate {
        #[arg(long, default_value_t = 8)]
        subjects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exercise bouts, e.g. `heels:8,knees:8,trunk:6,chair:5`.
        #[arg(long, default_value_t = SessionPlan::standard())]
        plan: SessionPlan,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model, or one per held-out subject with --losocv.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Directory for checkpoints and the training report.
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        losocv: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score checkpoints (or the ground truth, with --oracle).
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint files or training directories; one run each.
        #[arg(long, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
        iou_threshold: f64,
        #[arg(long)]
        oracle: bool,
        /// Use the n−1 standard deviation in the limits of agreement.
        #[arg(long)]
        sample_std: bool,
        /// Ignore predicted segments shorter than this in repetition counts.
        #[arg(long, default_value_t = 0)]
        min_pred_len: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Mask-ratio table as CSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Vertical velocity of every chair-rising repetition of one subject.
    Velocity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        subject: String,
        /// Checkpoint file or training directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        use_true_labels: bool,
        /// Manual still window `START:END` for gravity estimation.
        #[arg(long, value_parser = parse_span)]
        still: Option<(usize, usize)>,
        #[arg(long, default_value_t = LOWPASS_CUTOFF_HZ)]
        cutoff_hz: f64,
        #[arg(long, default_value_t = DEFAULT_BOUT_GAP)]
        bout_gap: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// LOSOCV training and evaluation over a grid of mask ratios and seeds.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATIOS)]
        ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
        iou_threshold: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    /// TOML file with `preset`, `[model]` and `[train]`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    preset: Preset,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patch_len: Option<usize>,
    /// Folds trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let o = Overrides {
            mask_ratio: self.mask_ratio,
            eta: self.eta,
            epochs: self.epochs,
            seed: self.seed,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            patch_len: self.patch_len,
        };
        let c = RunConfig::load(self.config.as_deref(), self.preset, &o)?;
        c.validate()?;
        Ok(c)
    }
}

fn parse_span(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a >= b {
        return Err(format!("empty window {a}:{b}"));
    }
    Ok((a, b))
}

fn print_eval(r: &EvalReport) {
    println!(
        "{:<28} {:>6} {:>10} {:>10}",
        "run", "folds", "sample F1", "segm. F1"
    );
    for run in &r.runs {
        println!(
            "{:<28} {:>6} {:>10.4} {:>10.4}",
            run.name,
            run.folds.len(),
            run.mean_sample_macro_f1,
            run.mean_segmental_macro_f1
        );
    }
    if !r.sweep.is_empty() {
        println!(
            "\n{:>10} {:>5} {:>10} {:>8}",
            "mask ratio", "runs", "sample F1", "std"
        );
        for row in &r.sweep {
            println!(
                "{:>10} {:>5} {:>10.4} {:>8.4}",
                row.mask_ratio, row.runs, row.mean_sample_macro_f1, row.std_sample_macro_f1
            );
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            subjects,
            seed,
            plan,
            out,
        } => {
            let m = run_generate(&GenerateOptions {
                subjects,
                seed,
                plan,
                out: out.clone(),
            })?;
            print!("{}", count_table(&m));
            eprintln!("wrote {} subjects to {}", m.subjects.len(), out.display());
        }
        Command::Train {
            run,
            out_checkpoint,
            losocv,
            report,
        } => {
            let config = run.config()?;
            let r = run_train(&TrainOptions {
                data: run.data,
                config,
                out: out_checkpoint,
                losocv,
                jobs: run.jobs,
                report,
            })?;
            for f in &r.folds {
                let last = f.epochs.last().map(|e| e.loss).unwrap_or(f64::NAN);
                println!(
                    "{:<8} epochs {:>4}  final loss {:.6}  {:.1} s  {}",
                    f.held_out.as_deref().unwrap_or("all"),
                    f.epochs.len(),
                    last,
                    f.wall_clock_s,
                    f.checkpoint
                );
            }
        }
        Command::Evaluate {
            data,
            checkpoints,
            iou_threshold,
            oracle,
            sample_std,
            min_pred_len,
            report,
            table,
        } => {
            let std = if sample_std {
                StdKind::Sample
            } else {
                StdKind::Population
            };
            let r = run_evaluate(&EvaluateOptions {
                data,
                checkpoints,
                iou_threshold,
                oracle,
                loa: LoaOptions { std, min_pred_len },
                report,
                table,
            })?;
            print_eval(&r);
        }
        Command::Velocity {
            data,
            subject,
            checkpoint,
            use_true_labels,
            still,
            cutoff_hz,
            bout_gap,
            report,
        } => {
            let r = run_velocity(&VelocityOptions {
                data,
                subject,
                checkpoint,
                use_true_labels,
                params: VelocityParams {
                    cutoff_hz,
                    bout_gap,
                    manual_still: still,
                },
                report,
            })?;
            if let Some(n) = &r.notice {
                eprintln!("{n}");
            }
            for k in &r.repetitions {
                println!(
                    "{:<14} [{:>6}, {:>6})  {:>5.2} s  peak |v| {:.3} m/s",
                    k.class_name, k.start, k.end, k.duration_s, k.max_abs_velocity
                );
            }
        }
        Command::Sweep {
            run,
            ratios,
            seeds,
            out,
            iou_threshold,
        } => {
            if ratios.is_empty() || seeds.is_empty() {
                return Err(UsageError("--ratios and --seeds must not be empty".into()).into());
            }
            let base = run.config()?;
            let r = run_sweep(&SweepOptions {
                data: run.data,
                base,
                runs: grid(&ratios, &seeds),
                out: out.clone(),
                jobs: run.jobs,
                iou_threshold,
            })?;
            print_eval(&r);
            eprintln!(
                "wrote {} and {}",
                out.join(SWEEP_REPORT_FILE).display(),
                out.join(SWEEP_TABLE_FILE).display()
            );
        }
    }
    Ok(())
}

/// The cause chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
