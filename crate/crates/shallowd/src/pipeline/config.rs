//! Pipeline configuration: file paths, per-learner hyperparameters, and the
//! run seed. Loaded from TOML; every field has a default so a config file
//! only needs the values it overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crf::CrfTrainConfig;
use crate::dtree;
use crate::neural::AdamParams;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrimTrainOn {
    /// Spans produced by the freshly trained segmenter.
    Predicted,
    /// Spans produced by projecting gold labels onto the candidate
    /// constituents (an oracle segmenter).
    Gold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSection {
    pub min_leaf: usize,
    pub confidence: f64,
    /// 0 means unbounded.
    pub max_depth: usize,
}

impl Default for TreeSection {
    fn default() -> Self {
        TreeSection {
            min_leaf: 2,
            confidence: 0.25,
            max_depth: 0,
        }
    }
}

impl TreeSection {
    pub fn to_train_config(&self) -> dtree::TrainConfig {
        dtree::TrainConfig {
            min_leaf: self.min_leaf,
            confidence: self.confidence,
            max_depth: if self.max_depth == 0 {
                usize::MAX
            } else {
                self.max_depth
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterSection {
    pub lambda: f64,
    pub epochs: usize,
    pub step: f64,
    pub batch_size: usize,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        SegmenterSection {
            lambda: 0.1,
            epochs: 50,
            step: 0.1,
            batch_size: 8,
        }
    }
}

impl SegmenterSection {
    pub fn to_train_config(&self, seed: u64) -> CrfTrainConfig {
        CrfTrainConfig {
            lambda: self.lambda,
            epochs: self.epochs,
            step: self.step,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSection {
    pub widths: Vec<usize>,
    pub n_filters: usize,
    pub dropout_p: f64,
    pub alpha_elu: f64,
    /// Fixed argument-length caps; when absent they are computed as the
    /// 99.5th percentile of the training argument lengths.
    pub limit1: Option<usize>,
    pub limit2: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            widths: vec![3, 4, 5],
            n_filters: 128,
            dropout_p: 0.5,
            alpha_elu: 1.0,
            limit1: None,
            limit2: None,
            batch_size: 50,
            epochs: 20,
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop_patience: 5,
        }
    }
}

impl NetSection {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            step: self.step,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Connective lexicon file; the bundled 100-pattern list when absent.
    pub lexicon: Option<PathBuf>,
    /// Head rule table; bundled table when absent.
    pub head_rules: Option<PathBuf>,
    /// Explicit sense inventory (14 labels); bundled file when absent.
    pub senses_explicit: Option<PathBuf>,
    /// Non-explicit sense inventory; bundled file when absent.
    pub senses_nonexplicit: Option<PathBuf>,
    /// Pretrained embedding file; required for net training.
    pub embeddings: Option<PathBuf>,
    /// Consider adjacent sentence pairs across paragraph boundaries.
    pub cross_paragraph: bool,
    pub trim_train_on: TrimTrainOn,
    /// Negatives kept per positive for the binary net.
    pub negative_ratio: f64,
    /// Fraction of net training data held out for early stopping.
    pub dev_fraction: f64,
    pub detector: TreeSection,
    pub senser: TreeSection,
    pub trimmer: TreeSection,
    pub segmenter: SegmenterSection,
    pub net: NetSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            lexicon: None,
            head_rules: None,
            senses_explicit: None,
            senses_nonexplicit: None,
            embeddings: None,
            cross_paragraph: false,
            trim_train_on: TrimTrainOn::Predicted,
            negative_ratio: 1.0,
            dev_fraction: 0.1,
            detector: TreeSection::default(),
            senser: TreeSection::default(),
            trimmer: TreeSection::default(),
            segmenter: SegmenterSection::default(),
            net: NetSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }
}
