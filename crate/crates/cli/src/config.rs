//! Run configuration files.
//!
//! A run is described by one TOML document. Relative paths inside it resolve
//! against the directory holding the file, so a config and its corpora can be
//! moved together.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use airdecode::diagnostics::SweepSettings;
use airdecode::metrics::ExternalClassifier;
use airdecode::{AttributePreset, CompositionMode, EnsembleConfig, Smoothing, TokenizerConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name; supplies the control strength and sampler defaults.
    pub task: String,
    /// One corpus file per attribute label, one document per line.
    pub corpora: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_corpus: Option<PathBuf>,
    /// Held-out text for the perplexity model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_corpus: Option<PathBuf>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<Smoothing>,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: CompositionMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub prompts: Vec<String>,
    #[serde(default)]
    pub decoding: DecodingOverrides,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierConfig>,
}

/// Fields that replace the preset's values when set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingOverrides {
    pub omega: Option<f64>,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub length: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub omegas: Vec<f64>,
    pub modes: Vec<CompositionMode>,
    pub samples_per_point: usize,
    pub overlap_k: usize,
    /// Documents per class for the training-volume sweep; empty skips it.
    pub volumes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            omegas: (0..8).map(|i| 20.0 * i as f64).collect(),
            modes: CompositionMode::ALL.to_vec(),
            samples_per_point: 100,
            overlap_k: 200,
            volumes: Vec::new(),
        }
    }
}

/// External scorer settings. The endpoint may also come from the environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub endpoint: Option<String>,
    pub score_path: Option<String>,
    pub positive_label: Option<String>,
    pub negative_label: Option<String>,
    pub threshold: Option<f64>,
    pub timeout_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
}

fn default_order() -> usize {
    3
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Reads and validates a config, resolving its paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let root = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(root);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, root: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        self.corpora.values_mut().for_each(join);
        self.base_corpus.iter_mut().for_each(join);
        self.eval_corpus.iter_mut().for_each(join);
        join(&mut self.out);
    }

    pub fn validate(&self) -> Result<()> {
        if AttributePreset::named(&self.task).is_none() {
            bail!(
                "unknown task `{}` (expected one of {})",
                self.task,
                AttributePreset::NAMES.join(", ")
            );
        }
        if self.corpora.len() < 2 {
            bail!("need corpora for at least 2 labels, got {}", self.corpora.len());
        }
        let paths = self
            .corpora
            .values()
            .chain(self.base_corpus.iter())
            .chain(self.eval_corpus.iter());
        for p in paths {
            if !p.is_file() {
                bail!("corpus file {} does not exist", p.display());
            }
        }
        if self.order < 1 {
            bail!("n-gram order must be at least 1");
        }
        self.preset().validate()?;
        Ok(())
    }

    pub fn preset(&self) -> AttributePreset {
        let mut preset = AttributePreset::named(&self.task).expect("validated task name");
        let d = &self.decoding;
        if let Some(w) = d.omega {
            preset.omega = w;
        }
        if let Some(k) = d.top_k {
            preset.top_k = Some(k);
        }
        if let Some(p) = d.top_p {
            preset.top_p = p;
        }
        if let Some(n) = d.length {
            preset.length = n;
        }
        preset
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            order: self.order,
            smoothing: self
                .smoothing
                .clone()
                .unwrap_or_else(|| Smoothing::for_order(self.order)),
            tokenizer: self.tokenizer,
            priors: self.priors.clone(),
        }
    }

    pub fn labeled_corpora(&self) -> Result<Vec<(String, Vec<String>)>> {
        self.corpora
            .iter()
            .map(|(label, path)| Ok((label.clone(), read_corpus(path)?)))
            .collect()
    }

    pub fn model_dir(&self) -> PathBuf {
        self.out.join("model")
    }

    pub fn sweep_settings(&self, labels: &[String], jobs: usize) -> SweepSettings {
        SweepSettings {
            prompts: if self.prompts.is_empty() {
                vec![String::new()]
            } else {
                self.prompts.clone()
            },
            targets: labels.to_vec(),
            omegas: self.sweep.omegas.clone(),
            modes: self.sweep.modes.clone(),
            samples_per_point: self.sweep.samples_per_point,
            preset: self.preset(),
            overlap_k: self.sweep.overlap_k,
            seed: self.seed,
            jobs,
        }
    }
}

impl ClassifierConfig {
    /// Builds the HTTP scorer for `endpoint`, applying any configured fields.
    pub fn external(&self, endpoint: &str) -> ExternalClassifier {
        let mut c = ExternalClassifier::new(endpoint);
        if let Some(p) = &self.score_path {
            c.score_path = p.clone();
        }
        if let Some(l) = &self.positive_label {
            c.positive_label = l.clone();
        }
        if let Some(l) = &self.negative_label {
            c.negative_label = l.clone();
        }
        if let Some(t) = self.threshold {
            c.threshold = t;
        }
        if let Some(ms) = self.timeout_ms {
            c.timeout = std::time::Duration::from_millis(ms);
        }
        c
    }
}

/// One document per non-blank line.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading corpus {}", path.display()))?;
    let docs: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    if docs.is_empty() {
        bail!("corpus {} has no documents", path.display());
    }
    Ok(docs)
}
