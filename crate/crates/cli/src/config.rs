//! Run configuration: a preset, optionally refined by a TOML file with
//! `[model]` and `[train]` tables, then by command-line overrides.

use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use repseg_core::train::TrainConfig;
use repseg_core::ModelConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// The published architecture: T=800, d_model 128, 3 layers, 7 TCN layers.
    Paper,
    /// Desk-scale model with T=200.
    Small,
    /// Minimal model with T=80, for smoke runs.
    Tiny,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Self::Paper => ModelConfig::default(),
            Self::Small => ModelConfig::small(),
            Self::Tiny => ModelConfig::tiny(),
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Self::Paper => TrainConfig::default(),
            // keep whole patches inside the shorter windows
            Self::Small => TrainConfig {
                patch_len: 20,
                ..TrainConfig::default()
            },
            Self::Tiny => TrainConfig {
                patch_len: 8,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<Preset>,
    #[serde(default)]
    model: toml::Table,
    #[serde(default)]
    train: toml::Table,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mask_ratio: Option<f64>,
    pub eta: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patch_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn merge<T: Serialize + DeserializeOwned>(base: &T, table: &toml::Table, what: &str) -> Result<T> {
    let mut merged = toml::Table::try_from(base).context("serializing defaults")?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    merged
        .try_into()
        .map_err(|e| DataError(format!("[{what}]: {e}")).into())
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            model: preset.model(),
            train: preset.train(),
        }
    }

    /// Preset, then the file (if any), then `overrides`. The file's own
    /// `preset` key wins over `preset`.
    pub fn load(path: Option<&Path>, preset: Preset, overrides: &Overrides) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| DataError(format!("{}: {e}", p.display())))?
            }
            None => ConfigFile::default(),
        };
        let base = Self::from_preset(file.preset.unwrap_or(preset));
        let mut cfg = Self {
            model: merge(&base.model, &file.model, "model")?,
            train: merge(&base.train, &file.train, "train")?,
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let t = &mut self.train;
        if let Some(v) = o.mask_ratio {
            t.mask_ratio = v;
        }
        if let Some(v) = o.eta {
            t.eta = v;
        }
        if let Some(v) = o.epochs {
            t.epochs = v;
        }
        if let Some(v) = o.seed {
            t.seed = v;
        }
        if let Some(v) = o.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = o.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = o.patch_len {
            t.patch_len = v;
        }
    }

    /// Every problem with the combined configuration.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.model.validate() {
            out.push(e.to_string());
        }
        out.extend(self.train.violations(self.model.window_len));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(DataError(format!("invalid configuration:\n  - {}", v.join("\n  - "))).into())
        }
    }
}
