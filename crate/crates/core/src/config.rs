//! Experiment configuration files.
//!
//! A single JSON document; every field has a default, so `{}` is a valid
//! (synthetic inpainting) experiment. `configs/` holds working examples.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, DegradeConfig, Sample, Task};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    /// Procedural images; the last `holdout` of `count + holdout` are held out.
    Synthetic { seed: u64, count: usize, holdout: usize, size: usize },
    /// PNG/PPM ground truths in a folder, degraded on load.
    Folder { path: PathBuf, holdout: usize },
    /// A corpus directory written by `gen-data`.
    Corpus { path: PathBuf, holdout: usize },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            seed: 1,
            count: 64,
            holdout: 16,
            size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub degrade: DegradeConfig,
    /// Seed for degradations (mask shapes, blur angles).
    pub degrade_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Defaults to the small CPU configuration for `task`.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Stage-1 checkpoint used to start stage 2.
    pub stage1_checkpoint: Option<PathBuf>,
    /// Checkpoint evaluated by `eval` and `infer`.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Inpainting,
            model: None,
            train: TrainConfig::default(),
            data: DataConfig::default(),
            stage1_checkpoint: None,
            checkpoint: None,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.out_dir);
        if let Some(p) = cfg.stage1_checkpoint.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.checkpoint.as_mut() {
            rebase(p);
        }
        match &mut cfg.data.source {
            DataSource::Folder { path, .. } | DataSource::Corpus { path, .. } => rebase(path),
            DataSource::Synthetic { .. } => {}
        }
        Ok(cfg)
    }

    /// Fills defaults that depend on other fields and checks consistency.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.task = self.task;
        let model = self.model.take().unwrap_or_else(|| ModelConfig::desk(self.task));
        model.validate()?;
        if model.uses_mask() != (self.task == Task::Inpainting) {
            return Err(Error::Config(format!(
                "model input channels {} do not fit task {:?}",
                model.dirformer.in_channels, self.task
            )));
        }
        self.model = Some(model);
        self.train.validate()?;
        Ok(self)
    }

    pub fn model(&self) -> ModelConfig {
        self.model.clone().unwrap_or_else(|| ModelConfig::desk(self.task))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Ground-truth/degraded pairs for training and held-out evaluation.
    pub fn load_pairs(&self) -> Result<(Vec<data::ImagePair>, Vec<data::ImagePair>)> {
        let (mut pairs, holdout) = match &self.data.source {
            DataSource::Synthetic {
                seed,
                count,
                holdout,
                size,
            } => {
                let images = data::gen_corpus(*seed, count + holdout, *size)?;
                (
                    data::degrade_all(&images, self.task, self.data.degrade_seed, &self.data.degrade)?,
                    *holdout,
                )
            }
            DataSource::Folder { path, holdout } => {
                let images = data::load_folder(path)?;
                (
                    data::degrade_all(&images, self.task, self.data.degrade_seed, &self.data.degrade)?,
                    *holdout,
                )
            }
            DataSource::Corpus { path, holdout } => (data::read_corpus(path)?, *holdout),
        };
        if holdout >= pairs.len() {
            return Err(Error::Data(format!(
                "holdout {holdout} leaves no training data out of {} images",
                pairs.len()
            )));
        }
        let held = pairs.split_off(pairs.len() - holdout);
        Ok((pairs, held))
    }

    pub fn load_samples(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let (train, held) = self.load_pairs()?;
        Ok((
            train.iter().map(|p| p.to_sample()).collect(),
            held.iter().map(|p| p.to_sample()).collect(),
        ))
    }
}
