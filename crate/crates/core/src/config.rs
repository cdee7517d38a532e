//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::{Embedding, FilmMode, GeneratorConfig};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_FILTER_LEN;
use crate::model::ModelConfig;
use crate::training::{default_tasks, ModelSpec, TrainConfig};

/// Generator settings as written in a config file. The task count comes
/// from `tasks` and the FiLM mode from `[model]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub embedding: Embedding,
    pub hidden_sizes: Option<Vec<usize>>,
    pub dropout: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection { embedding: Embedding::Cnn, hidden_sizes: None, dropout: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub generator: GeneratorSection,
    pub train: TrainConfig,
    /// Falls back to `CUNET_DATA_ROOT` when absent.
    pub data_root: Option<PathBuf>,
    pub tasks: Vec<String>,
    pub output_dir: PathBuf,
    pub filter_len: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            generator: GeneratorSection::default(),
            train: TrainConfig::default(),
            data_root: None,
            tasks: default_tasks(),
            output_dir: PathBuf::from("out"),
            filter_len: DEFAULT_FILTER_LEN,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("at least one task is required"));
        }
        let mut sorted = self.tasks.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.tasks.len() {
            return Err(Error::config("task names must be unique"));
        }
        if self.filter_len == 0 {
            return Err(Error::config("filter_len must be positive"));
        }
        let mut model = self.model.clone();
        model.conditioned = false;
        model.validate()?;
        self.generator_config(self.model.film_mode).validate()?;
        self.train.validate()
    }

    pub fn generator_config(&self, film_mode: FilmMode) -> GeneratorConfig {
        let mut g = GeneratorConfig::new(self.generator.embedding, film_mode, self.tasks.len());
        if let Some(h) = &self.generator.hidden_sizes {
            g.hidden_sizes = h.clone();
        }
        g.dropout = self.generator.dropout;
        g
    }

    /// Model description for a dedicated model of `task`, or the
    /// conditioned model when `task` is `None`.
    pub fn spec(&self, dedicated: Option<&str>) -> Result<ModelSpec> {
        let mut model = self.model.clone();
        let spec = match dedicated {
            Some(task) => {
                model.conditioned = false;
                ModelSpec { model, generator: None, tasks: self.tasks.clone(), dedicated_task: Some(task.to_string()) }
            }
            None => {
                model.conditioned = true;
                let generator = Some(self.generator_config(model.film_mode));
                ModelSpec { model, generator, tasks: self.tasks.clone(), dedicated_task: None }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}
