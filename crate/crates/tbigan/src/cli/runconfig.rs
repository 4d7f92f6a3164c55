//! Run configuration: one TOML document uniting model, training,
//! detection and evaluation settings plus data paths. A persisted config
//! reproduces a run bit-identically given identical inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::model::ModelConfig;
use crate::train::{SearchSpace, TrainConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Training stream CSV.
    pub train_csv: Option<PathBuf>,
    /// Labeled validation stream CSV (search, early stop).
    pub val_csv: Option<PathBuf>,
    /// Stream to score / evaluate.
    pub stream_csv: Option<PathBuf>,
    /// Model checkpoint (scoring); defaults to <out>/checkpoint.json.
    pub checkpoint: Option<PathBuf>,
    /// Preprocessing stats JSON; defaults to the checkpoint's stats_ref.
    pub stats: Option<PathBuf>,
    /// Feature weights JSON; defaults to a sibling of the checkpoint.
    pub weights: Option<PathBuf>,
    /// Score trace CSV for `evaluate`.
    pub trace_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSettings {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub quarantine: bool,
    /// Scoring stride (windows); 1 gives frame-resolution traces.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_alpha() -> f64 {
    0.6
}
fn default_gamma() -> f64 {
    1.0
}
fn default_k() -> usize {
    300
}
fn default_c() -> f64 {
    3.0
}
fn default_stride() -> usize {
    1
}

impl Default for DetectSettings {
    fn default() -> Self {
        DetectSettings {
            alpha: default_alpha(),
            gamma: default_gamma(),
            k: default_k(),
            c: default_c(),
            quarantine: false,
            stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Window,
    Frame,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_eval_mode")]
    pub mode: EvalMode,
    /// Leading fraction of the trace used as the validation slice for
    /// Youden threshold selection.
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
}

fn default_eval_mode() -> EvalMode {
    EvalMode::Both
}
fn default_val_frac() -> f64 {
    0.5
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            mode: default_eval_mode(),
            val_frac: default_val_frac(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    #[serde(default = "default_settings")]
    pub settings: usize,
    /// Trials (seeds) per sampled setting.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Epochs per trial.
    #[serde(default = "default_search_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub space: SearchSpace,
}

fn default_settings() -> usize {
    8
}
fn default_trials() -> usize {
    5
}
fn default_search_epochs() -> usize {
    10
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            settings: default_settings(),
            trials: default_trials(),
            epochs: default_search_epochs(),
            space: SearchSpace::default(),
        }
    }
}

/// Union of everything a run needs. Unset sections fall back to defaults,
/// so a minimal config is just data paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Training window stride; unset means half a window.
    #[serde(default)]
    pub train_stride: Option<usize>,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub detect: DetectSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub search: SearchSettings,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Propagate the run seed and the architectural flags that live in
    /// the training section.
    pub fn resolve(&mut self, seed_override: Option<u64>, out_override: Option<PathBuf>) {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        if let Some(o) = out_override {
            self.out_dir = Some(o);
        }
        self.train.seed = self.seed;
        self.model.spectral_norm = self.train.spectral_norm;
    }

    /// Training stride default: half a window.
    pub fn effective_train_stride(&self) -> usize {
        self.train_stride.unwrap_or((self.model.window_len / 2).max(1))
    }

    /// Short content hash for run-directory naming.
    pub fn hash8(&self) -> String {
        let text = self.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}
