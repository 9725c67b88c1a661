use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::LinearConfig;
use crate::contextlm::BiLmConfig;
use crate::embeddings::SkipGramConfig;
use crate::error::{Error, Result};
use crate::neural::{ClassifierConfig, Variant};
use crate::rng::substream_seed;
use crate::text::SyntheticConfig;
use crate::topics::{ConvConfig, LdaConfig};

/// Output layout, relative to the workspace root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data: PathBuf,
    pub assets: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
    pub benchmark: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: "data".into(),
            assets: "assets".into(),
            models: "models".into(),
            reports: "reports".into(),
            benchmark: "benchmark".into(),
        }
    }
}

/// Everything a run needs. Stage `seed` fields are ignored: every stage
/// seed is derived from the root `seed` through a named substream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub vocab_min_count: u64,
    pub lda: LdaConfig,
    pub topic: ConvConfig,
    pub embeddings: SkipGramConfig,
    pub bilm: BiLmConfig,
    pub classifier: ClassifierConfig,
    pub linear: LinearConfig,
    /// Feed TF-IDF weights instead of raw counts to naive Bayes.
    pub nb_tfidf_inputs: bool,
    /// Variants compared by `benchmark`.
    pub variants: Vec<Variant>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: Paths::default(),
            synthetic: SyntheticConfig::default(),
            vocab_min_count: 1,
            lda: LdaConfig::default(),
            topic: ConvConfig::default(),
            embeddings: SkipGramConfig::default(),
            bilm: BiLmConfig::default(),
            classifier: ClassifierConfig::default(),
            linear: LinearConfig::default(),
            nb_tfidf_inputs: false,
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl PipelineConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn data_seed(&self) -> u64 {
        substream_seed(self.seed, "data")
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.data_seed(),
            ..self.synthetic.clone()
        }
    }

    pub fn lda_config(&self) -> LdaConfig {
        LdaConfig {
            seed: substream_seed(self.seed, "lda"),
            ..self.lda.clone()
        }
    }

    pub fn embeddings_config(&self) -> SkipGramConfig {
        SkipGramConfig {
            seed: substream_seed(self.seed, "emb"),
            ..self.embeddings.clone()
        }
    }

    pub fn bilm_config(&self) -> BiLmConfig {
        BiLmConfig {
            seed: substream_seed(self.seed, "bilm"),
            ..self.bilm.clone()
        }
    }

    pub fn topic_config(&self) -> ConvConfig {
        ConvConfig {
            seed: substream_seed(self.seed, "topic-matrix"),
            ..self.topic.clone()
        }
    }

    pub fn classifier_config(&self, term: &str) -> ClassifierConfig {
        ClassifierConfig {
            seed: substream_seed(self.seed, &format!("clf/{term}")),
            ..self.classifier.clone()
        }
    }

    pub fn linear_config(&self, term: &str) -> LinearConfig {
        LinearConfig {
            seed: substream_seed(self.seed, &format!("clf/{term}")),
            ..self.linear.clone()
        }
    }
}
