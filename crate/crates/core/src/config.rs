//! One TOML schema shared by every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::GenConfig;
use crate::error::{Error, Result};
use crate::eval::EvalSettings;
use crate::retrieval::AnnConfig;
use crate::tower::TowerConfig;
use crate::trainer::TrainConfig;

/// Which learned model a stage operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lr,
    Cr,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Lr => "lr",
            Arch::Cr => "cr",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(Arch::Lr),
            "cr" => Ok(Arch::Cr),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}` (expected lr or cr)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoint_lr: PathBuf,
    pub checkpoint_cr: PathBuf,
    pub index_lr: PathBuf,
    pub index_cr: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let p = |f: &str| PathBuf::from("out").join(f);
        Self {
            dataset: p("dataset.tsv"),
            checkpoint_lr: p("lr.ckpt"),
            checkpoint_cr: p("cr.ckpt"),
            index_lr: p("lr.index"),
            index_cr: p("cr.index"),
            report: p("report.tsv"),
        }
    }
}

impl Paths {
    pub fn checkpoint_path(&self, arch: Arch) -> &Path {
        match arch {
            Arch::Lr => &self.checkpoint_lr,
            Arch::Cr => &self.checkpoint_cr,
        }
    }

    pub fn index_path(&self, arch: Arch) -> &Path {
        match arch {
            Arch::Lr => &self.index_lr,
            Arch::Cr => &self.index_cr,
        }
    }

    /// Loss curve written next to the checkpoint.
    pub fn loss_curve(&self, arch: Arch) -> PathBuf {
        self.checkpoint_path(arch).with_extension("loss.tsv")
    }
}

/// The full experiment recipe. `tower.conditional` is ignored; the stage's
/// architecture decides it, so LR and CR always share every other setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub tower: TowerConfig,
    pub train: TrainConfig,
    pub ann: AnnConfig,
    pub eval: EvalSettings,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text)
    }

    pub fn tower_for(&self, arch: Arch) -> TowerConfig {
        TowerConfig { conditional: arch == Arch::Cr, ..self.tower.clone() }
    }

    /// Sets every seed at once.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.gen.seed = seed;
        self.train.seed = seed;
        self.ann.seed = seed;
        self.eval.seed = seed;
        self
    }
}
