use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_version, read_json, write_json, IoError, FORMAT_VERSION};
use crate::classes::{CLASS_NAMES, N_CLASSES};
use crate::model::SAMPLE_RATE_HZ;
use crate::synth::{Recording, SessionPlan, SubjectProfile, SyntheticSubject, CHANNEL_NAMES};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const HEADER: [&str; 8] = ["t_index", "ax", "ay", "az", "gx", "gy", "gz", "label"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEcho {
    pub seed: u64,
    pub plan: SessionPlan,
    pub n_subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub file: String,
    pub n_samples: usize,
    /// Segments per class, background first (always zero).
    pub segment_counts: Vec<usize>,
    pub seed: Option<u64>,
    pub profile: Option<SubjectProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    pub class_names: Vec<String>,
    pub generator: Option<GeneratorEcho>,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    /// Segment counts summed over subjects.
    pub fn total_counts(&self) -> Vec<usize> {
        let mut total = vec![0; self.class_names.len()];
        for s in &self.subjects {
            for (t, c) in total.iter_mut().zip(&s.segment_counts) {
                *t += c;
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub recordings: Vec<Recording>,
}

impl Dataset {
    pub fn subject_ids(&self) -> Vec<String> {
        self.recordings
            .iter()
            .map(|r| r.subject_id.clone())
            .collect()
    }

    pub fn recording(&self, id: &str) -> Option<&Recording> {
        self.recordings.iter().find(|r| r.subject_id == id)
    }
}

fn counts(rec: &Recording) -> Vec<usize> {
    (0..N_CLASSES).map(|c| rec.segments.count(c)).collect()
}

/// Writes one CSV per subject plus the manifest into `dir`.
pub fn write_dataset(
    dir: &Path,
    subjects: &[SyntheticSubject],
    generator: Option<GeneratorEcho>,
) -> Result<DatasetManifest, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut entries = Vec::new();
    for s in subjects {
        let rec = &s.recording;
        let file = format!("{}.csv", rec.subject_id);
        let path = dir.join(&file);
        let csv_err = |source| IoError::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(HEADER).map_err(csv_err)?;
        for (t, row) in rec.signal.data().chunks_exact(6).enumerate() {
            let mut fields = Vec::with_capacity(8);
            fields.push(t.to_string());
            fields.extend(row.iter().map(|v| v.to_string()));
            fields.push(rec.labels[t].to_string());
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.flush().map_err(|e| IoError::io(&path, e))?;
        entries.push(SubjectEntry {
            id: rec.subject_id.clone(),
            file,
            n_samples: rec.len(),
            segment_counts: counts(rec),
            seed: Some(s.seed),
            profile: Some(s.profile.clone()),
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        sample_rate_hz: SAMPLE_RATE_HZ,
        channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        generator,
        subjects: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn read_subject(path: &Path, entry: &SubjectEntry) -> Result<Recording, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(IoError::format(
            path,
            format!("expected header {}", HEADER.join(",")),
        ));
    }
    let mut data = Vec::with_capacity(entry.n_samples * 6);
    let mut labels = Vec::with_capacity(entry.n_samples);
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let bad = |what: &str| IoError::format(path, format!("row {}: {what}", row + 2));
        let t: usize = record[0]
            .parse()
            .map_err(|_| bad("t_index is not an integer"))?;
        if t != row {
            return Err(bad("t_index out of sequence"));
        }
        for field in record.iter().skip(1).take(6) {
            let v: f64 = field.parse().map_err(|_| bad("non-numeric sample"))?;
            if !v.is_finite() {
                return Err(bad("non-finite sample"));
            }
            data.push(v);
        }
        let label: usize = record[7]
            .parse()
            .map_err(|_| bad("label is not an integer"))?;
        if label >= N_CLASSES {
            return Err(bad(&format!("label {label} outside 0..{N_CLASSES}")));
        }
        labels.push(label);
    }
    if labels.len() != entry.n_samples {
        return Err(IoError::format(
            path,
            format!("{} rows, manifest says {}", labels.len(), entry.n_samples),
        ));
    }
    let signal = Tensor::new(vec![labels.len(), 6], data)
        .map_err(|e| IoError::format(path, e.to_string()))?;
    let rec = Recording::from_labels(entry.id.clone(), signal, labels);
    if counts(&rec) != entry.segment_counts {
        return Err(IoError::format(
            path,
            "segment counts disagree with the manifest",
        ));
    }
    Ok(rec)
}

/// Reads and validates a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let manifest_path: PathBuf = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    check_version(&manifest_path, manifest.format_version)?;
    if manifest.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(IoError::format(
            &manifest_path,
            format!(
                "sample rate {} Hz, expected {SAMPLE_RATE_HZ}",
                manifest.sample_rate_hz
            ),
        ));
    }
    if manifest
        .channels
        .iter()
        .map(String::as_str)
        .ne(CHANNEL_NAMES)
    {
        return Err(IoError::format(&manifest_path, "unexpected channel list"));
    }
    if manifest.class_names.len() != N_CLASSES {
        return Err(IoError::format(&manifest_path, "unexpected class map"));
    }
    let recordings = manifest
        .subjects
        .iter()
        .map(|e| read_subject(&dir.join(&e.file), e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        manifest,
        recordings,
    })
}
