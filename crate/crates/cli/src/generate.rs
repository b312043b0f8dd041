use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use repseg_core::io::{write_dataset, DatasetManifest, GeneratorEcho};
use repseg_core::synth::{generate_subjects, SessionPlan};

use crate::UsageError;

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub subjects: usize,
    pub seed: u64,
    pub plan: SessionPlan,
    pub out: PathBuf,
}

pub fn run_generate(opts: &GenerateOptions) -> Result<DatasetManifest> {
    if opts.subjects == 0 {
        return Err(UsageError("--subjects must be at least 1".into()).into());
    }
    let subjects = generate_subjects(opts.subjects, opts.seed, &opts.plan)?;
    let echo = GeneratorEcho {
        seed: opts.seed,
        plan: opts.plan.clone(),
        n_subjects: opts.subjects,
    };
    write_dataset(&opts.out, &subjects, Some(echo))
        .with_context(|| format!("writing dataset to {}", opts.out.display()))
}

/// Segments per activity class and subject, with a total row.
pub fn count_table(m: &DatasetManifest) -> String {
    let classes = &m.class_names[1..];
    let width = classes.iter().map(|c| c.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}", "subject");
    for c in classes {
        let _ = write!(out, "  {c:>width$}");
    }
    out.push('\n');
    let mut row = |name: &str, counts: &[usize]| {
        let _ = write!(out, "{name:<width$}");
        for n in &counts[1..] {
            let _ = write!(out, "  {n:>width$}");
        }
        out.push('\n');
    };
    for s in &m.subjects {
        row(&s.id, &s.segment_counts);
    }
    row("total", &m.total_counts());
    out
}
