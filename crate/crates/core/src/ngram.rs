//! Interpolated additive-smoothing n-gram language model.
//!
//! Each order `k` (context length `k - 1` is stored as table `k - 1`) gives an
//! additive estimate `(c(ctx, w) + α) / (c(ctx) + α·V)`; the orders are mixed with
//! fixed Jelinek–Mercer weights. An unseen context contributes the uniform
//! `1/V`, so every query has full support as long as `α > 0`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dist::TokenDist;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, TokenizerConfig, Vocabulary, BOS_ID, EOS_ID};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ADDITIVE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoothing {
    /// Additive constant applied at every order.
    pub additive: f64,
    /// Mixture weights indexed by context length (`0` = unigram).
    pub interpolation: Vec<f64>,
}

impl Smoothing {
    /// Additive 0.01 with weights growing tenfold per order, e.g.
    /// `[1/111, 10/111, 100/111]` for trigrams.
    pub fn for_order(order: usize) -> Self {
        let raw: Vec<f64> = (0..order).map(|k| 10f64.powi(k as i32)).collect();
        let total: f64 = raw.iter().sum();
        Smoothing {
            additive: DEFAULT_ADDITIVE,
            interpolation: raw.into_iter().map(|w| w / total).collect(),
        }
    }

    /// All mass on the highest order.
    pub fn highest_order_only(order: usize, additive: f64) -> Self {
        let mut interpolation = vec![0.0; order];
        if let Some(last) = interpolation.last_mut() {
            *last = 1.0;
        }
        Smoothing {
            additive,
            interpolation,
        }
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        if !(self.additive.is_finite() && self.additive > 0.0) {
            return Err(Error::Config(format!(
                "additive smoothing constant must be positive, got {}",
                self.additive
            )));
        }
        if self.interpolation.len() != order {
            return Err(Error::Config(format!(
                "expected {order} interpolation weights, got {}",
                self.interpolation.len()
            )));
        }
        if self
            .interpolation
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::Config("interpolation weights must be non-negative".into()));
        }
        let sum: f64 = self.interpolation.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "interpolation weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u64)>,
}

impl ContextCounts {
    fn count(&self, token: TokenId) -> u64 {
        self.next
            .binary_search_by_key(&token, |&(t, _)| t)
            .map(|i| self.next[i].1)
            .unwrap_or(0)
    }
}

/// A trained, immutable n-gram model. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    smoothing: Smoothing,
    vocab: Arc<Vocabulary>,
    /// `tables[k]` maps length-`k` contexts to successor counts.
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NGramModel {
    /// Maximum-likelihood counting over tokenized documents.
    ///
    /// Each document is left-padded with `order - 1` BOS tokens and terminated
    /// with EOS. Token ids must be valid in `vocab`.
    pub fn train(
        corpus: &[Vec<TokenId>],
        vocab: Arc<Vocabulary>,
        order: usize,
        smoothing: Smoothing,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        smoothing.validate(order)?;
        if corpus.is_empty() {
            return Err(Error::Training("corpus is empty".into()));
        }
        let v = vocab.len() as TokenId;
        let mut raw: Vec<HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>>> =
            vec![HashMap::new(); order];
        let mut padded = Vec::new();
        for doc in corpus {
            if let Some(bad) = doc.iter().find(|&&t| t >= v) {
                return Err(Error::Training(format!(
                    "token id {bad} outside vocabulary of size {v}"
                )));
            }
            padded.clear();
            padded.extend(std::iter::repeat_n(BOS_ID, order - 1));
            padded.extend_from_slice(doc);
            padded.push(EOS_ID);
            for i in (order - 1)..padded.len() {
                let tok = padded[i];
                for (k, table) in raw.iter_mut().enumerate() {
                    let ctx = padded[i - k..i].to_vec();
                    *table.entry(ctx).or_default().entry(tok).or_insert(0) += 1;
                }
            }
        }
        let tables = raw
            .into_iter()
            .map(|table| {
                table
                    .into_iter()
                    .map(|(ctx, next)| {
                        let total = next.values().sum();
                        (
                            ctx,
                            ContextCounts {
                                total,
                                next: next.into_iter().collect(),
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(NGramModel {
            order,
            smoothing,
            vocab,
            tables,
        })
    }

    /// Builds a fresh vocabulary from `docs` and trains on them.
    pub fn train_texts(
        docs: &[String],
        tokenizer: &TokenizerConfig,
        order: usize,
        smoothing: Smoothing,
    ) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        let corpus: Vec<Vec<TokenId>> = docs
            .iter()
            .map(|d| tokenizer.tokenize_extend(d, &mut vocab))
            .collect();
        NGramModel::train(&corpus, Arc::new(vocab), order, smoothing)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> &Smoothing {
        &self.smoothing
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_arc(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Number of predicted positions seen in training.
    pub fn total_count(&self) -> u64 {
        self.tables[0].values().map(|c| c.total).sum()
    }

    /// The last `order - 1` tokens of `context`, left-padded with BOS.
    fn effective_context(&self, context: &[TokenId]) -> Vec<TokenId> {
        let need = self.order - 1;
        if context.len() >= need {
            context[context.len() - need..].to_vec()
        } else {
            let mut ctx = vec![BOS_ID; need - context.len()];
            ctx.extend_from_slice(context);
            ctx
        }
    }

    /// Unsmoothed relative frequency at the highest order, `None` for unseen contexts.
    pub fn mle_prob(&self, context: &[TokenId], token: TokenId) -> Option<f64> {
        let ctx = self.effective_context(context);
        self.tables[self.order - 1]
            .get(&ctx)
            .map(|c| c.count(token) as f64 / c.total as f64)
    }

    pub fn next_token_distribution(&self, context: &[TokenId]) -> TokenDist {
        let ctx = self.effective_context(context);
        let v = self.vocab.len();
        let alpha = self.smoothing.additive;
        let mut probs = vec![0.0; v];
        let mut floor = 0.0;
        for (k, &lambda) in self.smoothing.interpolation.iter().enumerate() {
            if lambda == 0.0 {
                continue;
            }
            let sub = &ctx[ctx.len() - k..];
            match self.tables[k].get(sub) {
                Some(counts) => {
                    let denom = counts.total as f64 + alpha * v as f64;
                    floor += lambda * alpha / denom;
                    for &(tok, c) in &counts.next {
                        probs[tok as usize] += lambda * c as f64 / denom;
                    }
                }
                None => floor += lambda / v as f64,
            }
        }
        for p in &mut probs {
            *p += floor;
        }
        // Interpolation of normalized components; only rounding separates this from 1.
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        TokenDist::new(probs).expect("interpolated distribution is normalized")
    }

    /// Smoothed probability of a single token, without materializing the full vector.
    pub fn prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let ctx = self.effective_context(context);
        let v = self.vocab.len() as f64;
        let alpha = self.smoothing.additive;
        self.smoothing
            .interpolation
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.0)
            .map(|(k, &lambda)| {
                let sub = &ctx[ctx.len() - k..];
                match self.tables[k].get(sub) {
                    Some(counts) => {
                        lambda * (counts.count(token) as f64 + alpha)
                            / (counts.total as f64 + alpha * v)
                    }
                    None => lambda / v,
                }
            })
            .sum()
    }

    /// Sum of `ln P(x_i | prefix, x_<i)` over `text`.
    pub fn log_likelihood(&self, prefix: &[TokenId], text: &[TokenId]) -> f64 {
        let mut context = prefix.to_vec();
        let mut total = 0.0;
        for &tok in text {
            total += self.prob(&context, tok).ln();
            context.push(tok);
        }
        total
    }

    pub fn sequence_perplexity(&self, text: &[TokenId]) -> Result<f64> {
        self.conditional_perplexity(&[], text)
    }

    /// Perplexity of `text` conditioned on (but not scoring) `prefix`.
    pub fn conditional_perplexity(&self, prefix: &[TokenId], text: &[TokenId]) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::EmptyInput("perplexity of an empty text"));
        }
        let ll = self.log_likelihood(prefix, text);
        Ok((-ll / text.len() as f64).exp())
    }

    pub fn to_file(&self) -> ModelFile {
        let mut counts = BTreeMap::new();
        for table in &self.tables {
            for (ctx, cc) in table {
                let key = join_ids(ctx);
                let next = cc
                    .next
                    .iter()
                    .map(|&(t, c)| (t.to_string(), c))
                    .collect();
                counts.insert(key, next);
            }
        }
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            order: self.order,
            smoothing: self.smoothing.clone(),
            vocabulary: self.vocab.tokens().to_vec(),
            counts,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        let vocab = Arc::new(Vocabulary::from_tokens(file.vocabulary.clone())?);
        NGramModel::from_file_with_vocab(file, vocab)
    }

    /// Like [`from_file`](Self::from_file) but reuses an existing vocabulary,
    /// which must match the file's token list.
    pub fn from_file_with_vocab(file: ModelFile, vocab: Arc<Vocabulary>) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: file.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        if file.order < 1 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if vocab.tokens() != file.vocabulary.as_slice() {
            return Err(Error::Config("model vocabulary does not match".into()));
        }
        file.smoothing.validate(file.order)?;
        let v = vocab.len() as u64;
        let mut tables: Vec<HashMap<Vec<TokenId>, ContextCounts>> =
            vec![HashMap::new(); file.order];
        for (key, next) in file.counts {
            let ctx = split_ids(&key)?;
            if ctx.len() >= file.order {
                return Err(Error::Config(format!(
                    "context `{key}` longer than order {}",
                    file.order
                )));
            }
            let mut entries = Vec::with_capacity(next.len());
            for (tok, count) in next {
                let tok: TokenId = tok
                    .parse()
                    .map_err(|_| Error::Config(format!("bad token id `{tok}`")))?;
                if tok as u64 >= v || ctx.iter().any(|&t| t as u64 >= v) {
                    return Err(Error::Config(format!(
                        "token id out of range in context `{key}`"
                    )));
                }
                if count == 0 {
                    return Err(Error::Config(format!("zero count under `{key}`")));
                }
                entries.push((tok, count));
            }
            entries.sort_unstable();
            let total = entries.iter().map(|&(_, c)| c).sum();
            tables[ctx.len()].insert(
                ctx,
                ContextCounts {
                    total,
                    next: entries,
                },
            );
        }
        Ok(NGramModel {
            order: file.order,
            smoothing: file.smoothing,
            vocab,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_file())?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        NGramModel::from_file(ModelFile::read(path)?)
    }
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub order: usize,
    pub smoothing: Smoothing,
    pub vocabulary: Vec<String>,
    /// Context (space-joined token ids, `""` for unigrams) to successor id to count.
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

fn join_ids(ids: &[TokenId]) -> String {
    ids.iter()
        .map(TokenId::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn split_ids(key: &str) -> Result<Vec<TokenId>> {
    key.split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("bad context key `{key}`")))
        })
        .collect()
}
