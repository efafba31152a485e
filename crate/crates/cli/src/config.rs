use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use specdistill::distill::DistillConfig;
use specdistill::evaluator::EvaluatorConfig;
use specdistill::policy::PolicyConfig;
use specdistill::seq2seq::DecodeStrategy;

use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusSource {
    /// The fixed-distribution single-prompt toy corpus.
    Fruit,
    /// Template-generated dialogues with a tunable generic share.
    Synthetic,
    /// One utterance per line; consecutive lines form pairs.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub source: CorpusSource,
    pub path: Option<PathBuf>,
    /// Generated pairs (fruit and synthetic sources).
    pub size: usize,
    /// Pairs held out for perplexity and evaluation; 0 means "use the training corpus".
    pub dev_size: usize,
    pub generic_fraction: f64,
    pub max_vocab: usize,
    pub min_count: usize,
    pub max_len: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            source: CorpusSource::Synthetic,
            path: None,
            size: 3000,
            dev_size: 0,
            generic_fraction: 0.5,
            max_vocab: 50_000,
            min_count: 1,
            max_len: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Human pairs (and as many machine pairs) for the human-vs-machine evaluator.
    pub evaluator_pairs: usize,
    /// Held-out sources used for the adversarial table and selection histogram.
    pub test_sources: usize,
    /// Training sources the policy draws episodes from.
    pub policy_inputs: usize,
    pub corpus: CorpusSpec,
    pub distill: DistillConfig,
    pub evaluator: EvaluatorConfig,
    pub policy: PolicyConfig,
    /// Strategy used by `respond`.
    pub decode: DecodeStrategy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            evaluator_pairs: 1000,
            test_sources: 500,
            policy_inputs: 1000,
            corpus: CorpusSpec::default(),
            distill: DistillConfig::default(),
            evaluator: EvaluatorConfig::default(),
            policy: PolicyConfig::default(),
            decode: DecodeStrategy::StochasticGreedy { k: 5 },
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file; a relative corpus path is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let Some(p) = &config.corpus.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.corpus.path = Some(base.join(p));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.corpus;
        match c.source {
            CorpusSource::File if c.path.is_none() => return Err(ConfigError("corpus.path is required for a file corpus".into())),
            CorpusSource::Fruit | CorpusSource::Synthetic if c.size == 0 => {
                return Err(ConfigError("corpus.size must be positive".into()))
            }
            _ => {}
        }
        if c.source != CorpusSource::File && c.dev_size >= c.size {
            return Err(ConfigError(format!("corpus.dev_size {} leaves no training data out of {}", c.dev_size, c.size)));
        }
        if !(0.0..=1.0).contains(&c.generic_fraction) {
            return Err(ConfigError(format!("corpus.generic_fraction {} outside [0, 1]", c.generic_fraction)));
        }
        if c.max_len == 0 || c.min_count == 0 {
            return Err(ConfigError("corpus.max_len and corpus.min_count must be positive".into()));
        }
        if self.evaluator_pairs == 0 || self.test_sources == 0 || self.policy_inputs == 0 {
            return Err(ConfigError("evaluator_pairs, test_sources and policy_inputs must be positive".into()));
        }
        if let DecodeStrategy::StochasticGreedy { k: 0 } = self.decode {
            return Err(ConfigError("decode.k must be positive".into()));
        }
        self.distill.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.evaluator.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.policy.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
