//! Declarative run configuration for the pipeline binary.
//!
//! One TOML file drives every stage; command-line flags override individual
//! fields. The master `seed` is folded with a per-stage tag so each
//! stochastic component gets its own deterministic stream.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::abae::AbaeConfig;
use crate::baselines::{KMeansConfig, LdaConfig};
use crate::corpus::SplitRules;
use crate::embeddings::SgnsConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Raw review records, one per line.
    pub reviews: PathBuf,
    /// Every artifact the pipeline produces lands under here.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            reviews: PathBuf::from("reviews.tsv"),
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    /// Drop sentences below this non-whitespace ASCII ratio when set.
    pub min_ascii_ratio: Option<f64>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::corpus::DEFAULT_VOCAB_SIZE,
            min_ascii_ratio: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizeConfig {
    /// Sentences retrieved per (listing, aspect).
    pub top_k: usize,
    pub annotators: usize,
    /// Fraction of examples every annotator rates, for agreement.
    pub holdout_fraction: f64,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            annotators: 3,
            holdout_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfilesConfig {
    /// `bos`, `bor`, or `max_softmax`.
    pub aggregation: String,
}

impl Default for ProfilesConfig {
    fn default() -> Self {
        Self {
            aggregation: "bos".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CoherenceConfig {
    /// Top-word counts evaluated per aspect.
    pub word_counts: Vec<usize>,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        Self {
            word_counts: vec![10, 30, 50],
        }
    }
}

/// The full run configuration with library defaults everywhere.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Default method for the analysis stages: `abae`, `kmeans`, or `lda`.
    pub method: String,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub split: SplitRules,
    pub sgns: SgnsConfig,
    pub abae: AbaeConfig,
    pub kmeans: KMeansConfig,
    pub lda: LdaConfig,
    pub summarize: SummarizeConfig,
    pub profiles: ProfilesConfig,
    pub coherence: CoherenceConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        if config.method.is_empty() {
            config.method = "abae".to_string();
        }
        if config.seed == 0 {
            config.seed = 1;
        }
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Per-stage seed: FNV-1a over the stage tag folded into the master seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ master
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_toml() {
        let config = RunConfig::from_toml("").unwrap();
        assert_eq!(config.method, "abae");
        assert_eq!(config.corpus.vocab_size, 9000);
        assert_eq!(config.sgns.dimension, 200);
        assert_eq!(config.abae.aspects, 30);
        assert_eq!(config.summarize.top_k, 3);
        assert_eq!(config.profiles.aggregation, "bos");
        assert_eq!(config.coherence.word_counts, vec![10, 30, 50]);
    }

    #[test]
    fn overrides_apply() {
        let text = r#"
seed = 42
method = "kmeans"

[sgns]
dimension = 32

[abae]
aspects = 5

[split]
min_reviews_per_listing = 10
"#;
        let config = RunConfig::from_toml(text).unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.method, "kmeans");
        assert_eq!(config.sgns.dimension, 32);
        assert_eq!(config.sgns.window, 5);
        assert_eq!(config.abae.aspects, 5);
        assert_eq!(config.abae.batch_size, 50);
        assert_eq!(config.split.min_reviews_per_listing, 10);
    }

    #[test]
    fn stage_seeds_differ_by_stage() {
        let config = RunConfig::from_toml("seed = 9").unwrap();
        assert_ne!(config.stage_seed("sgns"), config.stage_seed("abae"));
        assert_eq!(config.stage_seed("sgns"), config.stage_seed("sgns"));
    }
}
