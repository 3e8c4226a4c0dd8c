//! Temperature, top-k and nucleus filtering, and inverse-CDF sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{ranked_ids, top_ids, TokenDist};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

pub type SeededRng = ChaCha8Rng;

/// Independent stream for the `index`-th sequence of a run.
pub fn sequence_rng(seed: u64, index: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub top_k: Option<usize>,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            top_k: Some(200),
            top_p: 1.0,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == Some(0) {
            return Err(Error::Config("top-k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top-p {} outside (0, 1]", self.top_p)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Temperature, then top-k, then top-p. `top_k` larger than the vocabulary
    /// keeps everything.
    pub fn filter(&self, dist: &TokenDist) -> Result<TokenDist> {
        let mut d = apply_temperature(dist, self.temperature)?;
        if let Some(k) = self.top_k {
            d = top_k_filter(&d, k.min(d.len()))?;
        }
        if self.top_p < 1.0 {
            d = top_p_filter(&d, self.top_p)?;
        }
        Ok(d)
    }
}

/// `softmax(ln p / T)`; identity at `T = 1`.
pub fn apply_temperature(dist: &TokenDist, temperature: f64) -> Result<TokenDist> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if temperature == 1.0 {
        return Ok(dist.clone());
    }
    let logw: Vec<f64> = dist.probs().iter().map(|p| p.ln() / temperature).collect();
    TokenDist::from_log_weights(&logw)
}

fn keep_only(dist: &TokenDist, keep: &[TokenId]) -> Result<TokenDist> {
    let mut weights = vec![0.0; dist.len()];
    for &id in keep {
        weights[id as usize] = dist[id as usize];
    }
    TokenDist::from_weights(weights)
}

/// Keeps the `k` most probable tokens (ties by ascending id) and renormalizes.
pub fn top_k_filter(dist: &TokenDist, k: usize) -> Result<TokenDist> {
    if k < 1 || k > dist.len() {
        return Err(Error::Config(format!(
            "top-k {k} outside 1..={}",
            dist.len()
        )));
    }
    if k == dist.len() {
        return Ok(dist.clone());
    }
    keep_only(dist, &top_ids(dist.probs(), k))
}

/// Keeps the shortest probability-sorted prefix with cumulative mass `>= p`.
pub fn top_p_filter(dist: &TokenDist, p: f64) -> Result<TokenDist> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("top-p {p} outside (0, 1]")));
    }
    if p == 1.0 {
        return Ok(dist.clone());
    }
    let order = ranked_ids(dist.probs());
    let mut cum = 0.0;
    let mut cut = order.len();
    for (i, &id) in order.iter().enumerate() {
        cum += dist[id as usize];
        if cum >= p {
            cut = i + 1;
            break;
        }
    }
    keep_only(dist, &order[..cut])
}

/// Inverse-CDF draw over the vector order.
pub fn sample<R: Rng + ?Sized>(dist: &TokenDist, rng: &mut R) -> TokenId {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = i;
            if u < cum {
                return i as TokenId;
            }
        }
    }
    // u landed in the rounding gap above the final cumulative sum.
    last_positive as TokenId
}
