use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::ToyConfig;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Synthetic-corpus settings that are not model dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub stories: usize,
    pub vocab_size: usize,
    pub topics: usize,
    pub noise: f64,
}

impl Default for ToySection {
    fn default() -> Self {
        let d = ToyConfig::default();
        Self {
            stories: d.stories,
            vocab_size: d.vocab_size,
            topics: d.topics,
            noise: d.noise,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub word_emb: Option<PathBuf>,
    pub sent_emb: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Effective settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub beam: usize,
    pub model: TrainConfig,
    pub toy: ToySection,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            jobs: 1,
            beam: 1,
            model: TrainConfig::default(),
            toy: ToySection::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Settings at the scale of the published model.
    pub fn paper_scale() -> Self {
        Self {
            model: TrainConfig {
                hidden: 768,
                locations: 196,
                sentence_len: 15,
                images_per_story: 5,
                batch_size: 16,
                dropout_p: 0.4,
                learning_rate: 1e-3,
                raw_dim: 512,
                ..TrainConfig::default()
            },
            toy: ToySection {
                vocab_size: 18000,
                ..ToySection::default()
            },
            ..Self::default()
        }
    }

    /// Built-in defaults overlaid with a JSON config file. Keys absent from
    /// the file keep their default; unknown keys are an error.
    pub fn load(paper_scale: bool, file: Option<&Path>) -> Result<Self> {
        let base = if paper_scale { Self::paper_scale() } else { Self::default() };
        let Some(path) = file else {
            return Ok(base);
        };
        let text = std::fs::read_to_string(path)?;
        let overlay: Value = serde_json::from_str(&text).map_err(|e| Error::BadFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, overlay);
        serde_json::from_value(merged).map_err(|e| Error::BadFile {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn toy_config(&self) -> ToyConfig {
        ToyConfig {
            seed: self.seed,
            stories: self.toy.stories,
            vocab_size: self.toy.vocab_size,
            topics: self.toy.topics,
            images_per_story: self.model.images_per_story,
            sentence_len: self.model.sentence_len,
            locations: self.model.locations,
            raw_dim: self.model.raw_dim,
            embed_dim: self.model.hidden,
            noise: self.toy.noise,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
