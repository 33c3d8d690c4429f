//! Aspect extraction toolkit for review corpora.
//!
//! The pipeline goes: raw reviews -> sentence segmentation and tokenization
//! ([`corpus`]) -> skip-gram word embeddings ([`embeddings`]) -> an
//! attention-based aspect autoencoder ([`abae`]) with k-means and LDA
//! baselines ([`baselines`]) -> aspect labeling and coherence scoring
//! ([`aspects`]) -> extractive summarization with human-judgment metrics
//! ([`summarize`]) and guest-profile reranking experiments ([`profiles`]).
//!
//! The `review-aspects` binary (see [`cli`]) orchestrates the stages from a
//! single TOML run configuration.

pub mod abae;
pub mod aspects;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod numerics;
pub mod profiles;
pub mod summarize;
pub mod synthetic;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on input data was violated.
    #[error("{0}")]
    InvalidInput(String),
    /// Tensor or vector dimensions do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A text record or model file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
    /// A binary or text artifact is structurally invalid.
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use abae::{AbaeConfig, AbaeModel, AspectDistribution};
pub use corpus::{EncodedCorpus, EncodedSentence, RawReview, SplitRules, Splits, Vocabulary};
pub use embeddings::{EmbeddingTable, SgnsConfig};
