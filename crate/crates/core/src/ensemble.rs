//! A base language model plus one conditional model per attribute class.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dist::TokenDist;
use crate::error::{Error, Result};
use crate::ngram::{ModelFile, NGramModel, Smoothing};
use crate::vocab::{TokenId, TokenizerConfig, Vocabulary};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Corpora and training settings for [`AttributeEnsemble::build`].
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub order: usize,
    pub smoothing: Smoothing,
    pub tokenizer: TokenizerConfig,
    /// Class priors aligned with the labeled corpora. Uniform when `None`.
    pub priors: Option<Vec<f64>>,
}

impl EnsembleConfig {
    pub fn with_order(order: usize) -> Self {
        EnsembleConfig {
            order,
            smoothing: Smoothing::for_order(order),
            tokenizer: TokenizerConfig::default(),
            priors: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttributeEnsemble {
    vocab: Arc<Vocabulary>,
    tokenizer: TokenizerConfig,
    base: NGramModel,
    labels: Vec<String>,
    classes: Vec<NGramModel>,
    priors: Vec<f64>,
}

impl AttributeEnsemble {
    /// Trains every model over the union vocabulary of all supplied corpora.
    ///
    /// The base model is trained on `base_corpus` when given, otherwise on the
    /// concatenation of all class corpora.
    pub fn build(
        labeled: &[(String, Vec<String>)],
        base_corpus: Option<&[String]>,
        config: &EnsembleConfig,
    ) -> Result<Self> {
        if labeled.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 attribute classes, got {}",
                labeled.len()
            )));
        }
        let labels: Vec<String> = labeled.iter().map(|(l, _)| l.clone()).collect();
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::Config("attribute labels must be unique".into()));
        }
        for (label, docs) in labeled {
            if docs.is_empty() {
                return Err(Error::Config(format!("corpus for `{label}` is empty")));
            }
        }
        let priors = match &config.priors {
            Some(p) => validate_priors(p, labels.len())?,
            None => vec![1.0 / labels.len() as f64; labels.len()],
        };

        // Sorted token inventory so ids do not depend on corpus order.
        let mut surface = BTreeSet::new();
        let all_docs = labeled
            .iter()
            .flat_map(|(_, docs)| docs.iter())
            .chain(base_corpus.into_iter().flatten());
        for doc in all_docs {
            surface.extend(config.tokenizer.split(doc));
        }
        let mut vocab = Vocabulary::new();
        for tok in &surface {
            vocab.insert(tok);
        }
        let vocab = Arc::new(vocab);

        let encode = |docs: &[String]| -> Vec<Vec<TokenId>> {
            docs.iter()
                .map(|d| config.tokenizer.tokenize(d, &vocab))
                .collect()
        };
        let mut classes = Vec::with_capacity(labeled.len());
        let mut union = Vec::new();
        for (_, docs) in labeled {
            let encoded = encode(docs);
            classes.push(NGramModel::train(
                &encoded,
                vocab.clone(),
                config.order,
                config.smoothing.clone(),
            )?);
            union.extend(encoded);
        }
        let base_encoded = match base_corpus {
            Some(docs) => encode(docs),
            None => union,
        };
        let base = NGramModel::train(
            &base_encoded,
            vocab.clone(),
            config.order,
            config.smoothing.clone(),
        )?;
        Ok(AttributeEnsemble {
            vocab,
            tokenizer: config.tokenizer,
            base,
            labels,
            classes,
            priors,
        })
    }

    /// Assembles an ensemble from already-trained models sharing one vocabulary.
    pub fn from_models(
        tokenizer: TokenizerConfig,
        base: NGramModel,
        classes: Vec<(String, NGramModel)>,
        priors: Option<Vec<f64>>,
    ) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 attribute classes, got {}",
                classes.len()
            )));
        }
        let vocab = base.vocab_arc().clone();
        let (labels, models): (Vec<String>, Vec<NGramModel>) = classes.into_iter().unzip();
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::Config("attribute labels must be unique".into()));
        }
        if models.iter().any(|m| m.vocab() != vocab.as_ref()) {
            return Err(Error::Config(
                "all models in an ensemble must share one vocabulary".into(),
            ));
        }
        let priors = match priors {
            Some(p) => validate_priors(&p, labels.len())?,
            None => vec![1.0 / labels.len() as f64; labels.len()],
        };
        Ok(AttributeEnsemble {
            vocab,
            tokenizer,
            base,
            labels,
            classes: models,
            priors,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn base(&self) -> &NGramModel {
        &self.base
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_models(&self) -> &[NGramModel] {
        &self.classes
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_owned()))
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        self.tokenizer.tokenize(text, &self.vocab)
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        self.tokenizer.detokenize(ids, &self.vocab)
    }

    /// One next-token distribution per class, in label order.
    pub fn class_distributions(&self, context: &[TokenId]) -> Vec<TokenDist> {
        self.classes
            .iter()
            .map(|m| m.next_token_distribution(context))
            .collect()
    }

    /// Writes `manifest.json`, `base.json` and one model file per class into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.base.save(&dir.join("base.json"))?;
        let mut classes = Vec::with_capacity(self.labels.len());
        for (i, (label, model)) in self.labels.iter().zip(&self.classes).enumerate() {
            let file = format!("class_{i}_{}.json", sanitize(label));
            model.save(&dir.join(&file))?;
            classes.push(ManifestClass {
                label: label.clone(),
                model_path: file,
                prior: Some(self.priors[i]),
            });
        }
        let manifest = Manifest {
            format_version: MANIFEST_FORMAT_VERSION,
            tokenizer: self.tokenizer,
            base_model_path: "base.json".into(),
            classes,
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a manifest; model paths resolve relative to the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Load {
            path: manifest_path.to_owned(),
            message: e.to_string(),
        })?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: manifest.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let base = NGramModel::load(&root.join(&manifest.base_model_path))?;
        let vocab = base.vocab_arc().clone();
        let mut classes = Vec::with_capacity(manifest.classes.len());
        for class in &manifest.classes {
            let path = root.join(&class.model_path);
            let file = ModelFile::read(&path)?;
            let model =
                NGramModel::from_file_with_vocab(file, vocab.clone()).map_err(|e| Error::Load {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            classes.push((class.label.clone(), model));
        }
        let priors = if manifest.classes.iter().all(|c| c.prior.is_some()) {
            Some(manifest.classes.iter().filter_map(|c| c.prior).collect())
        } else if manifest.classes.iter().any(|c| c.prior.is_some()) {
            return Err(Error::Config(
                "priors must be given for all classes or none".into(),
            ));
        } else {
            None
        };
        AttributeEnsemble::from_models(manifest.tokenizer, base, classes, priors)
    }
}

fn validate_priors(priors: &[f64], n: usize) -> Result<Vec<f64>> {
    if priors.len() != n {
        return Err(Error::Config(format!(
            "expected {n} priors, got {}",
            priors.len()
        )));
    }
    if priors.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::Config("priors must be positive".into()));
    }
    let sum: f64 = priors.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("priors sum to {sum}, expected 1")));
    }
    Ok(priors.to_vec())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    pub base_model_path: String,
    pub classes: Vec<ManifestClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClass {
    pub label: String,
    pub model_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<f64>,
}

/// Named decoding settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePreset {
    pub name: String,
    pub omega: f64,
    /// `None` disables top-k filtering.
    pub top_k: Option<usize>,
    pub top_p: f64,
    pub length: usize,
}

impl AttributePreset {
    pub fn new(name: &str, omega: f64) -> Self {
        AttributePreset {
            name: name.to_owned(),
            omega,
            top_k: Some(200),
            top_p: 1.0,
            length: 50,
        }
    }

    /// Presets for the sentiment, topic and detoxification setups.
    /// The bare task names alias the medium-model strength.
    pub fn named(name: &str) -> Option<Self> {
        let omega = match name {
            "sentiment" | "sentiment-medium" => 140.0,
            "sentiment-large" => 130.0,
            "topic" | "topic-medium" => 60.0,
            "topic-large" => 70.0,
            "detox" | "detox-medium" => 120.0,
            "detox-large" => 140.0,
            _ => return None,
        };
        Some(AttributePreset::new(name, omega))
    }

    pub const NAMES: [&'static str; 9] = [
        "sentiment",
        "sentiment-medium",
        "sentiment-large",
        "topic",
        "topic-medium",
        "topic-large",
        "detox",
        "detox-medium",
        "detox-large",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::Config(format!(
                "control strength must be non-negative, got {}",
                self.omega
            )));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top-k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "top-p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.length < 1 {
            return Err(Error::Config("generation length must be at least 1".into()));
        }
        Ok(())
    }
}
