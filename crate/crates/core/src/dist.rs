//! Index-aligned probability and weight vectors over a shared vocabulary.

use std::cmp::Ordering;
use std::ops::Index;

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Tolerance for the sum-to-one check on [`TokenDist`].
pub const NORM_TOL: f64 = 1e-9;

/// A probability distribution over token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDist {
    probs: Vec<f64>,
}

impl TokenDist {
    /// Validates that `probs` is a proper distribution.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(TokenDist { probs })
    }

    /// Normalizes non-negative finite weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::DegenerateComposition);
        }
        let probs = weights.into_iter().map(|w| w / sum).collect();
        TokenDist::new(probs)
    }

    /// Softmax of log-weights. `-inf` entries become exact zeros.
    pub fn from_log_weights(logw: &[f64]) -> Result<Self> {
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateComposition);
        }
        let weights = logw.iter().map(|l| (l - max).exp()).collect();
        TokenDist::from_weights(weights)
    }

    pub fn uniform(len: usize) -> Self {
        TokenDist {
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn one_hot(len: usize, id: TokenId) -> Self {
        let mut probs = vec![0.0; len];
        probs[id as usize] = 1.0;
        TokenDist { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> TokenId {
        ranked_ids(&self.probs)[0]
    }

    /// Highest-probability `(id, prob)` pairs, ties broken by ascending id.
    pub fn top_entries(&self, n: usize) -> Vec<(TokenId, f64)> {
        top_entries(&self.probs, n)
    }
}

impl Index<usize> for TokenDist {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// Non-negative finite weights that need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVec {
    weights: Vec<f64>,
}

impl WeightVec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "weight {i} is {w}"
            )));
        }
        Ok(WeightVec { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl From<&TokenDist> for WeightVec {
    fn from(dist: &TokenDist) -> Self {
        WeightVec {
            weights: dist.probs.clone(),
        }
    }
}

impl Index<usize> for WeightVec {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

/// Descending by value, ascending by id on ties.
pub(crate) fn rank_order(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b]
        .partial_cmp(&values[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// All ids sorted by [`rank_order`].
pub fn ranked_ids(values: &[f64]) -> Vec<TokenId> {
    let mut ids: Vec<usize> = (0..values.len()).collect();
    ids.sort_by(|&a, &b| rank_order(values, a, b));
    ids.into_iter().map(|i| i as TokenId).collect()
}

/// The `n` best ids under [`rank_order`], in rank order.
pub fn top_ids(values: &[f64], n: usize) -> Vec<TokenId> {
    let n = n.min(values.len());
    if n == 0 {
        return Vec::new();
    }
    let mut ids: Vec<usize> = (0..values.len()).collect();
    if n < ids.len() {
        ids.select_nth_unstable_by(n - 1, |&a, &b| rank_order(values, a, b));
        ids.truncate(n);
    }
    ids.sort_by(|&a, &b| rank_order(values, a, b));
    ids.into_iter().map(|i| i as TokenId).collect()
}

pub fn top_entries(values: &[f64], n: usize) -> Vec<(TokenId, f64)> {
    top_ids(values, n)
        .into_iter()
        .map(|id| (id, values[id as usize]))
        .collect()
}
