//! Decoding-time attribute control for n-gram language models.
//!
//! An [`AttributeEnsemble`] pairs a base model with one conditional model per
//! attribute class. [`decode::generate`] steers the base model toward a target
//! class by weighting each candidate token with the class posterior raised to
//! a control strength. In the default [`CompositionMode::Reconstructed`] mode
//! the class distributions are passed through `p -> -1/ln p` first, which keeps
//! high control strengths from drowning out the base model.

pub mod decode;
pub mod diagnostics;
pub mod dist;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod ngram;
pub mod par;
pub mod sampling;
pub mod toy;
pub mod vocab;

pub use decode::{
    attribute_posterior, compose, generate, generate_batch, reconstruct, CompositionMode,
    DecodeState, GenerationConfig, GenerationRequest, GenerationTrace,
};
pub use dist::{TokenDist, WeightVec};
pub use ensemble::{AttributeEnsemble, AttributePreset, EnsembleConfig};
pub use error::{Error, Result};
pub use ngram::{NGramModel, Smoothing};
pub use vocab::{TokenId, TokenizerConfig, Vocabulary};
