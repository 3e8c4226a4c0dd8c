//! Attribute-guided decoding.
//!
//! At every step each class model yields a next-token distribution. In
//! [`CompositionMode::Reconstructed`] those distributions are mapped through
//! `p -> -1/ln p` before forming the attribute posterior; in
//! [`CompositionMode::Raw`] the probabilities are used as they are. The posterior
//! of the target class for candidate token `i` is
//!
//! ```text
//! post_i = w_target,i · D_target / Σ_c w_c,i · D_c
//! ```
//!
//! where `D_c` is the product of class `c`'s weights on the tokens already
//! generated (times its prior). `D_c` is kept as a running log-sum in
//! [`DecodeState`], so each step costs one pass over the vocabulary. The
//! output distribution is `base_i · post_i^ω`, renormalized.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{overlap_ratios, OverlapRatios, TopSets};
use crate::dist::{TokenDist, WeightVec};
use crate::ensemble::{AttributeEnsemble, AttributePreset};
use crate::error::{Error, Result};
use crate::par;
use crate::sampling::{sample, sequence_rng, SamplerConfig, SeededRng};
use crate::vocab::{TokenId, BOS_ID, EOS_ID, UNK_ID};

/// Lower clamp applied before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-300;
/// Upper clamp; keeps `-1/ln p` finite as `p -> 1`.
pub const PROB_CEIL: f64 = 1.0 - 1e-9;

/// `-1/ln p` on the clamped probability. Zero stays zero.
#[inline]
pub fn reconstruct_prob(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -1.0 / p.clamp(PROB_FLOOR, PROB_CEIL).ln()
    }
}

/// Maps a distribution to rank-preserving, range-compressed weights.
/// The result does not sum to one.
pub fn reconstruct(dist: &TokenDist) -> WeightVec {
    WeightVec::new(dist.probs().iter().map(|&p| reconstruct_prob(p)).collect())
        .expect("reconstructed weights are finite and non-negative")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionMode {
    #[default]
    Reconstructed,
    Raw,
}

impl CompositionMode {
    pub const ALL: [CompositionMode; 2] = [CompositionMode::Raw, CompositionMode::Reconstructed];

    /// Per-class weight vectors for this mode.
    pub fn weights(self, dists: &[TokenDist]) -> Vec<WeightVec> {
        match self {
            CompositionMode::Reconstructed => dists.iter().map(reconstruct).collect(),
            CompositionMode::Raw => dists.iter().map(WeightVec::from).collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CompositionMode::Reconstructed => "reconstructed",
            CompositionMode::Raw => "raw",
        }
    }
}

impl fmt::Display for CompositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompositionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reconstructed" | "air" => Ok(CompositionMode::Reconstructed),
            "raw" => Ok(CompositionMode::Raw),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected raw or reconstructed)"
            ))),
        }
    }
}

/// Rolling context plus one accumulated log-weight per class.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    pub context: Vec<TokenId>,
    /// `Σ ln w_c(x_j)` over the generated tokens, per class.
    pub log_delta: Vec<f64>,
    pub step: usize,
    /// Number of times a zero weight had to be replaced by the clamp floor.
    pub clamp_events: usize,
}

impl DecodeState {
    pub fn new(prompt: Vec<TokenId>, num_classes: usize) -> Self {
        DecodeState {
            context: prompt,
            log_delta: vec![0.0; num_classes],
            step: 0,
            clamp_events: 0,
        }
    }

    /// Folds the weights of the sampled token into every class accumulator.
    pub fn update_delta(&mut self, sampled: TokenId, weights: &[WeightVec]) {
        debug_assert_eq!(weights.len(), self.log_delta.len());
        for (acc, w) in self.log_delta.iter_mut().zip(weights) {
            let mut wi = w[sampled as usize];
            if wi <= 0.0 {
                warn!(
                    "zero class weight for sampled token {sampled} at step {}; using clamp floor",
                    self.step
                );
                self.clamp_events += 1;
                wi = PROB_FLOOR;
            }
            *acc += wi.ln();
        }
        self.context.push(sampled);
        self.step += 1;
    }
}

/// Per-token posterior of class `target`.
///
/// `priors` may be empty (uniform). Tokens where every class weight is zero get
/// `1 / num_classes`.
pub fn attribute_posterior(
    weights: &[WeightVec],
    state: &DecodeState,
    priors: &[f64],
    target: usize,
) -> Vec<f64> {
    let n = weights.len();
    assert!(target < n, "target class out of range");
    assert_eq!(state.log_delta.len(), n, "one accumulator per class");
    let v = weights[0].len();
    let offsets: Vec<f64> = (0..n)
        .map(|c| state.log_delta[c] + priors.get(c).map_or(0.0, |p| p.ln()))
        .collect();
    let mut terms = vec![0.0; n];
    (0..v)
        .map(|i| {
            let mut max = f64::NEG_INFINITY;
            for c in 0..n {
                let w = weights[c][i];
                terms[c] = if w > 0.0 {
                    w.ln() + offsets[c]
                } else {
                    f64::NEG_INFINITY
                };
                max = max.max(terms[c]);
            }
            if max == f64::NEG_INFINITY {
                return 1.0 / n as f64;
            }
            let denom: f64 = terms.iter().map(|t| (t - max).exp()).sum();
            ((terms[target] - max).exp() / denom).min(1.0)
        })
        .collect()
}

/// `base_i · posterior_i^ω`, renormalized. `ω = 0` returns `base` unchanged.
pub fn compose(base: &TokenDist, posterior: &[f64], omega: f64) -> Result<TokenDist> {
    if !(omega.is_finite() && omega >= 0.0) {
        return Err(Error::Config(format!(
            "control strength must be non-negative, got {omega}"
        )));
    }
    if posterior.len() != base.len() {
        return Err(Error::Config("posterior and base are not index-aligned".into()));
    }
    if omega == 0.0 {
        return Ok(base.clone());
    }
    let logw: Vec<f64> = base
        .probs()
        .iter()
        .zip(posterior)
        .map(|(&b, &q)| {
            if b <= 0.0 || q <= 0.0 {
                f64::NEG_INFINITY
            } else {
                b.ln() + omega * q.ln()
            }
        })
        .collect();
    TokenDist::from_log_weights(&logw)
}

/// `posterior^ω` renormalized over the vocabulary.
pub fn attribute_distribution(posterior: &[f64], omega: f64) -> TokenDist {
    let logw: Vec<f64> = posterior
        .iter()
        .map(|&q| {
            if omega == 0.0 {
                0.0
            } else if q <= 0.0 {
                f64::NEG_INFINITY
            } else {
                omega * q.ln()
            }
        })
        .collect();
    TokenDist::from_log_weights(&logw).unwrap_or_else(|_| TokenDist::uniform(posterior.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub omega: f64,
    pub mode: CompositionMode,
    pub sampler: SamplerConfig,
    pub length: usize,
    /// Stop when EOS is sampled; otherwise EOS is masked and exactly `length`
    /// tokens are produced.
    pub stop_at_eos: bool,
    /// Entries kept per distribution in trace records; 0 disables them.
    pub trace_top: usize,
    /// Top-set size for per-step overlap ratios; `None` skips them.
    pub overlap_k: Option<usize>,
}

impl GenerationConfig {
    pub fn from_preset(preset: &AttributePreset, mode: CompositionMode) -> Self {
        GenerationConfig {
            omega: preset.omega,
            mode,
            sampler: SamplerConfig {
                top_k: preset.top_k,
                top_p: preset.top_p,
                temperature: 1.0,
                seed: 0,
            },
            length: preset.length,
            stop_at_eos: false,
            trace_top: 20,
            overlap_k: Some(200),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::Config(format!(
                "control strength must be non-negative, got {}",
                self.omega
            )));
        }
        if self.length < 1 {
            return Err(Error::Config("generation length must be at least 1".into()));
        }
        if self.overlap_k == Some(0) {
            return Err(Error::Config("overlap top-set size must be at least 1".into()));
        }
        self.sampler.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopEntry {
    pub id: TokenId,
    pub token: String,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopTokens {
    pub base: Vec<TopEntry>,
    /// Keyed `class_<label>`.
    #[serde(flatten)]
    pub classes: BTreeMap<String, Vec<TopEntry>>,
    pub posterior: Vec<TopEntry>,
    /// `posterior^ω` renormalized; the set the overlap diagnostics call S_a.
    pub attribute: Vec<TopEntry>,
    pub output: Vec<TopEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub context_len: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub top_tokens: Option<TopTokens>,
    pub sampled_token: TokenId,
    /// Accumulators after folding in `sampled_token`.
    pub log_delta: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overlap: Option<OverlapRatios>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub target: String,
    pub mode: CompositionMode,
    pub omega: f64,
    pub prompt_ids: Vec<TokenId>,
    /// Generated continuation only.
    pub tokens: Vec<TokenId>,
    pub prompt: String,
    pub text: String,
    pub steps: Vec<StepRecord>,
    pub clamp_events: usize,
}

impl GenerationTrace {
    pub fn full_tokens(&self) -> Vec<TokenId> {
        let mut all = self.prompt_ids.clone();
        all.extend_from_slice(&self.tokens);
        all
    }

    pub fn full_text(&self) -> String {
        match (self.prompt.is_empty(), self.text.is_empty()) {
            (true, _) => self.text.clone(),
            (_, true) => self.prompt.clone(),
            _ => format!("{} {}", self.prompt, self.text),
        }
    }

    /// Step-averaged overlap ratios, if they were recorded.
    pub fn mean_overlap(&self) -> Option<OverlapRatios> {
        let recorded: Vec<&OverlapRatios> =
            self.steps.iter().filter_map(|s| s.overlap.as_ref()).collect();
        OverlapRatios::mean(recorded.into_iter())
    }

    /// One JSON object per step.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn steps_from_jsonl(text: &str) -> Result<Vec<StepRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }
}

/// One sequence to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub target: String,
}

/// Generates one continuation of `prompt` steered toward `target`.
pub fn generate(
    ensemble: &AttributeEnsemble,
    prompt: &str,
    target: &str,
    config: &GenerationConfig,
    seed: u64,
) -> Result<GenerationTrace> {
    let mut rng = sequence_rng(seed, 0);
    generate_with_rng(ensemble, prompt, target, config, &mut rng)
}

pub fn generate_with_rng(
    ensemble: &AttributeEnsemble,
    prompt: &str,
    target: &str,
    config: &GenerationConfig,
    rng: &mut SeededRng,
) -> Result<GenerationTrace> {
    config.validate()?;
    let target_idx = ensemble.label_index(target)?;
    let prompt_ids = ensemble.tokenize(prompt);
    let vocab = ensemble.vocab();
    let v = vocab.len();
    let labels = ensemble.labels();
    let mut state = DecodeState::new(prompt_ids.clone(), ensemble.num_classes());
    let mut steps = Vec::with_capacity(config.length);
    let mut tokens = Vec::with_capacity(config.length);

    let entries = |values: &[f64]| -> Vec<TopEntry> {
        crate::dist::top_entries(values, config.trace_top)
            .into_iter()
            .map(|(id, p)| TopEntry {
                id,
                token: vocab.token(id).unwrap_or_default().to_owned(),
                p,
            })
            .collect()
    };

    while state.step < config.length {
        let base = ensemble.base().next_token_distribution(&state.context);
        let class_dists = ensemble.class_distributions(&state.context);
        let weights = config.mode.weights(&class_dists);
        let posterior = attribute_posterior(&weights, &state, ensemble.priors(), target_idx);
        let output = compose(&base, &posterior, config.omega)?;

        let needs_attr = config.trace_top > 0 || config.overlap_k.is_some();
        let attr = needs_attr.then(|| attribute_distribution(&posterior, config.omega));
        let overlap = match (config.overlap_k, &attr) {
            (Some(k), Some(attr)) => {
                let sets = TopSets::from_dists(&output, &base, attr, k.min(v))?;
                Some(overlap_ratios(&sets)?)
            }
            _ => None,
        };
        let top_tokens = (config.trace_top > 0).then(|| TopTokens {
            base: entries(base.probs()),
            classes: labels
                .iter()
                .zip(&class_dists)
                .map(|(l, d)| (format!("class_{l}"), entries(d.probs())))
                .collect(),
            posterior: entries(&posterior),
            attribute: entries(attr.as_ref().expect("computed when tracing").probs()),
            output: entries(output.probs()),
        });

        let mut masked = output.into_probs();
        masked[BOS_ID as usize] = 0.0;
        masked[UNK_ID as usize] = 0.0;
        if !config.stop_at_eos {
            masked[EOS_ID as usize] = 0.0;
        }
        let sampling = config.sampler.filter(&TokenDist::from_weights(masked)?)?;
        let sampled = sample(&sampling, rng);

        let context_len = state.context.len();
        state.update_delta(sampled, &weights);
        tokens.push(sampled);
        steps.push(StepRecord {
            step: state.step - 1,
            context_len,
            top_tokens,
            sampled_token: sampled,
            log_delta: labels
                .iter()
                .cloned()
                .zip(state.log_delta.iter().copied())
                .collect(),
            overlap,
        });
        if config.stop_at_eos && sampled == EOS_ID {
            break;
        }
    }

    Ok(GenerationTrace {
        target: target.to_owned(),
        mode: config.mode,
        omega: config.omega,
        prompt: ensemble.detokenize(&prompt_ids),
        text: ensemble.detokenize(&tokens),
        prompt_ids,
        tokens,
        steps,
        clamp_events: state.clamp_events,
    })
}

/// Generates every request with its own RNG stream (`seed`, request index), so
/// results are independent of `jobs`.
pub fn generate_batch(
    ensemble: &AttributeEnsemble,
    requests: &[GenerationRequest],
    config: &GenerationConfig,
    seed: u64,
    jobs: usize,
) -> Vec<Result<GenerationTrace>> {
    par::map_indexed(requests, jobs, |i, req| {
        let mut rng = sequence_rng(seed, i as u64);
        generate_with_rng(ensemble, &req.prompt, &req.target, config, &mut rng)
    })
}
