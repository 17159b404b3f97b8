//! End-to-end orchestration: configuration, the training harness for all
//! six learners, bundle persistence, document parsing, and the command-line
//! interface.

pub mod cli;
mod config;
mod train;

pub use config::{NetSection, PipelineConfig, SegmenterSection, TreeSection, TrimTrainOn};
pub use train::train_all;

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{CorpusError, Document, Relation};
use crate::crf::{CrfError, CrfModel};
use crate::dtree::{DecisionTree, DtError};
use crate::explicit::{self, ConnectiveLexicon, ExplicitModels, LexiconError};
use crate::neural::{ConvNetModel, NeuralError};
use crate::nonexplicit;
use crate::syntax::{HeadRules, TreeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training {component}: {message}")]
    Train { component: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    DecisionTree(#[from] DtError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The six trained models plus the resources and configuration snapshot
/// needed to parse.
#[derive(Debug)]
pub struct ModelBundle {
    pub detector: DecisionTree,
    pub senser: DecisionTree,
    pub segmenter: CrfModel,
    pub trimmer: DecisionTree,
    pub binary_net: ConvNetModel,
    pub multiclass_net: ConvNetModel,
    pub lexicon: ConnectiveLexicon,
    pub lexicon_text: String,
    pub head_rules: HeadRules,
    pub head_rules_text: String,
    pub config: PipelineConfig,
}

impl ModelBundle {
    /// Writes the bundle as a directory of model files.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("detector.json"), self.detector.to_json()?)?;
        fs::write(dir.join("senser.json"), self.senser.to_json()?)?;
        fs::write(dir.join("segmenter.json"), self.segmenter.to_json()?)?;
        fs::write(dir.join("trimmer.json"), self.trimmer.to_json()?)?;
        fs::write(dir.join("binary_net.bin"), self.binary_net.to_bytes())?;
        fs::write(
            dir.join("multiclass_net.bin"),
            self.multiclass_net.to_bytes(),
        )?;
        fs::write(dir.join("lexicon.txt"), &self.lexicon_text)?;
        fs::write(dir.join("head_rules.txt"), &self.head_rules_text)?;
        fs::write(dir.join("config.toml"), self.config.to_toml())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let read = |name: &str| -> Result<String, PipelineError> {
            fs::read_to_string(dir.join(name))
                .map_err(|e| PipelineError::Config(format!("{}/{name}: {e}", dir.display())))
        };
        let lexicon_text = read("lexicon.txt")?;
        let head_rules_text = read("head_rules.txt")?;
        Ok(ModelBundle {
            detector: DecisionTree::from_json(&read("detector.json")?)?,
            senser: DecisionTree::from_json(&read("senser.json")?)?,
            segmenter: CrfModel::from_json(&read("segmenter.json")?)?,
            trimmer: DecisionTree::from_json(&read("trimmer.json")?)?,
            binary_net: ConvNetModel::load(&dir.join("binary_net.bin"))?,
            multiclass_net: ConvNetModel::load(&dir.join("multiclass_net.bin"))?,
            lexicon: ConnectiveLexicon::parse(&lexicon_text)?,
            head_rules: HeadRules::parse(&head_rules_text)?,
            lexicon_text,
            head_rules_text,
            config: {
                let text = read("config.toml")?;
                toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
            },
        })
    }

    fn explicit_models(&self) -> ExplicitModels {
        ExplicitModels {
            detector: self.detector.clone(),
            senser: self.senser.clone(),
            segmenter: self.segmenter.clone(),
            trimmer: self.trimmer.clone(),
            head_rules: self.head_rules.clone(),
        }
    }
}

/// Parses a corpus with a trained bundle: explicit relations of every
/// document in document order, then the non-explicit relations. Relation
/// ids are unique within each document, explicit relations first.
pub fn parse(corpus: &[Document], bundle: &ModelBundle) -> Result<Vec<Relation>, PipelineError> {
    let models = bundle.explicit_models();
    let mut explicit_all = Vec::new();
    let mut nonexplicit_all = Vec::new();
    for doc in corpus {
        let explicit = explicit::annotate_explicit(doc, &bundle.lexicon, &models);
        let nonexplicit = nonexplicit::annotate_nonexplicit(
            doc,
            &explicit,
            &bundle.binary_net,
            &bundle.multiclass_net,
            explicit.len() as u64,
            bundle.config.cross_paragraph,
        )?;
        explicit_all.extend(explicit);
        nonexplicit_all.extend(nonexplicit);
    }
    explicit_all.extend(nonexplicit_all);
    Ok(explicit_all)
}
