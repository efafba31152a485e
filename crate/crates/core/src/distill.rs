//! Iterative data distillation.
//!
//! Each round trains a model from scratch on the current corpus, greedy
//! decodes a sample of its sources, keeps the responses produced more often
//! than a threshold, scores every training target by its best cosine
//! similarity to those responses (encoder embeddings), and removes the
//! highest-scoring fraction before the next round.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{ExampleId, ParallelCorpus, TokenId};
use crate::error::{Error, Result};
use crate::metrics::{self, response_frequency_table, IterationReport};
use crate::nn::ops::cosine;
use crate::seed;
use crate::seq2seq::{self, GenerationModel, ModelConfig, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq)]
pub struct FrequentEntry {
    pub response: Vec<TokenId>,
    pub count: usize,
    pub embedding: Vec<f64>,
}

/// Decoded responses whose count exceeded the threshold, most frequent first.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FrequentList {
    pub entries: Vec<FrequentEntry>,
    pub threshold: f64,
    pub decoded: usize,
}

impl FrequentList {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// `response TAB count` lines.
    pub fn to_tsv(&self, vocab: &crate::corpus::Vocabulary) -> String {
        self.entries.iter().map(|e| format!("{}\t{}\n", vocab.decode(&e.response), e.count)).collect()
    }
}

/// Greedy-decodes every input and keeps responses seen more than `threshold`
/// times, each with its encoder embedding. Empty responses are never listed
/// since they have no embedding.
pub fn collect_frequent<S: AsRef<[TokenId]>>(model: &GenerationModel, inputs: &[S], threshold: f64) -> FrequentList {
    let decoded: Vec<Vec<TokenId>> = inputs.iter().map(|s| model.decode_greedy(s.as_ref()).response().to_vec()).collect();
    let entries = response_frequency_table(&decoded)
        .into_iter()
        .filter(|(r, c)| *c as f64 > threshold && !r.is_empty())
        .map(|(response, count)| {
            let embedding = model.encode_sentence(&response).expect("non-empty in-vocabulary response");
            FrequentEntry { response, count, embedding }
        })
        .collect();
    FrequentList { entries, threshold, decoded: decoded.len() }
}

/// Best cosine similarity between an embedding and the frequent entries;
/// `-inf` for an empty list, meaning "never remove".
pub fn max_cosine(embedding: &[f64], frequent: &FrequentList) -> f64 {
    frequent.entries.iter().map(|e| cosine(embedding, &e.embedding)).fold(f64::NEG_INFINITY, f64::max)
}

/// Relevance of a training target to the frequent list.
pub fn relevance(target: &[TokenId], frequent: &FrequentList, model: &GenerationModel) -> Result<f64> {
    if frequent.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(max_cosine(&model.encode_sentence(target)?, frequent))
}

/// `ceil(fraction * size)`, robust to products like `0.07 * 100 = 7.000000000000001`.
pub fn removal_count(fraction: f64, size: usize) -> usize {
    let x = fraction * size as f64;
    let r = x.round();
    let n = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (n.max(0.0) as usize).min(size)
}

/// Picks the `count` highest-relevance ids; equal relevance removes the
/// higher id first. Returns removed ids in ascending order.
pub fn select_removals(scores: &[(ExampleId, f64)], count: usize) -> Vec<ExampleId> {
    let mut ranked: Vec<&(ExampleId, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
    let mut removed: Vec<ExampleId> = ranked.into_iter().take(count).map(|s| s.0).collect();
    removed.sort_unstable();
    removed
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Number of rounds (pool size when no round saturates).
    pub iterations: usize,
    /// Fraction of the current corpus removed per round.
    pub removal_fraction: f64,
    /// Frequency threshold per million decodes, scaled to the decode count.
    pub threshold_per_million: f64,
    /// Upper bound on the number of training sources decoded per round.
    pub decode_subset: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            removal_fraction: 0.09,
            threshold_per_million: 100.0,
            decode_subset: 50_000,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("at least one distillation round is required".into()));
        }
        if !(0.0..1.0).contains(&self.removal_fraction) {
            return Err(Error::Config(format!("removal fraction {} outside [0, 1)", self.removal_fraction)));
        }
        if !(self.threshold_per_million > 0.0) || self.decode_subset == 0 {
            return Err(Error::Config("threshold and decode subset must be positive".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }

    pub fn threshold_for(&self, decoded: usize) -> f64 {
        self.threshold_per_million * decoded as f64 / 1e6
    }
}

/// Outcome of the decode/score/remove half of a round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub frequent: FrequentList,
    /// Relevance per example id, in corpus order.
    pub relevance: Vec<(ExampleId, f64)>,
    pub removed: Vec<ExampleId>,
    pub kept: Vec<ExampleId>,
    /// No response exceeded the threshold, so nothing was removed.
    pub saturated: bool,
}

/// Decodes a seeded sample of sources with `model`, then removes the
/// `ceil(fraction * |corpus|)` most relevant examples.
pub fn distill_round(corpus: &ParallelCorpus, model: &GenerationModel, fraction: f64, config: &DistillConfig, seed: u64) -> Result<RoundOutcome> {
    let n_decode = corpus.len().min(config.decode_subset);
    let mut rng = seed::rng(seed);
    let mut picks = rand::seq::index::sample(&mut rng, corpus.len(), n_decode).into_vec();
    picks.sort_unstable();
    let inputs: Vec<&[TokenId]> = picks.iter().map(|&k| corpus.examples()[k].source.as_slice()).collect();
    let frequent = collect_frequent(model, &inputs, config.threshold_for(n_decode));
    let relevance = corpus
        .iter()
        .map(|e| Ok((e.id, relevance(&e.target, &frequent, model)?)))
        .collect::<Result<Vec<_>>>()?;
    let saturated = frequent.is_empty();
    let removed = if saturated { Vec::new() } else { select_removals(&relevance, removal_count(fraction, corpus.len())) };
    let removed_set: BTreeSet<ExampleId> = removed.iter().copied().collect();
    let kept = corpus.ids().into_iter().filter(|id| !removed_set.contains(id)).collect();
    Ok(RoundOutcome { frequent, relevance, removed, kept, saturated })
}

/// Everything recorded for one round.
#[derive(Clone, Debug)]
pub struct DistillationRound {
    /// 1-based round index; the model trained here is `Iter{iteration}`.
    pub iteration: usize,
    pub input_size: usize,
    pub train_seed: u64,
    pub decode_seed: u64,
    pub train_report: TrainReport,
    pub outcome: RoundOutcome,
}

impl DistillationRound {
    pub fn metadata(&self, fraction: f64) -> serde_json::Value {
        json!({
            "iteration": self.iteration,
            "input_size": self.input_size,
            "removed": self.outcome.removed.len(),
            "kept": self.outcome.kept.len(),
            "fraction": fraction,
            "threshold": self.outcome.frequent.threshold,
            "decoded": self.outcome.frequent.decoded,
            "frequent_entries": self.outcome.frequent.len(),
            "saturated": self.outcome.saturated,
            "train_seed": self.train_seed,
            "decode_seed": self.decode_seed,
            "train": self.train_report,
        })
    }
}

/// Ordered pool `Iter1..IterN`. `train_sizes[i]` is the corpus size model `i` saw.
#[derive(Clone, Debug, Default)]
pub struct ModelPool {
    pub models: Vec<GenerationModel>,
    pub train_sizes: Vec<usize>,
}

impl ModelPool {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&GenerationModel> {
        self.models.get(index)
    }

    pub fn refs(&self) -> Vec<&GenerationModel> {
        self.models.iter().collect()
    }

    pub fn iteration_report(&self, dev: &ParallelCorpus) -> Result<Vec<IterationReport>> {
        metrics::build_iteration_report(&self.refs(), &self.train_sizes, dev)
    }

    /// Loads `iter_XX/model.ckpt` for consecutive rounds until one is missing.
    pub fn load_dir(run_dir: &Path) -> Result<Self> {
        let mut pool = Self::default();
        for i in 1.. {
            let dir = round_dir(run_dir, i);
            let ckpt = dir.join("model.ckpt");
            if !ckpt.exists() {
                break;
            }
            let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("round.json"))?)?;
            pool.models.push(GenerationModel::load(&ckpt)?);
            pool.train_sizes.push(meta["input_size"].as_u64().unwrap_or(0) as usize);
        }
        Ok(pool)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    /// A round found no frequent responses; the pool stops there.
    Saturated,
}

#[derive(Clone, Debug)]
pub struct DistillationRun {
    pub pool: ModelPool,
    pub rounds: Vec<DistillationRound>,
    pub status: RunStatus,
}

pub fn round_dir(run_dir: &Path, iteration: usize) -> PathBuf {
    run_dir.join(format!("iter_{iteration:02}"))
}

fn ids_text(ids: &[ExampleId]) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

/// Writes model checkpoint, frequent list, removed/kept id lists and round
/// metadata for one round.
pub fn write_round(run_dir: &Path, round: &DistillationRound, model: &GenerationModel, fraction: f64) -> Result<()> {
    let dir = round_dir(run_dir, round.iteration);
    fs::create_dir_all(&dir)?;
    model.save(&dir.join("model.ckpt"))?;
    fs::write(dir.join("frequent.tsv"), round.outcome.frequent.to_tsv(model.vocab()))?;
    fs::write(dir.join("removed_ids.txt"), ids_text(&round.outcome.removed))?;
    fs::write(dir.join("kept_ids.txt"), ids_text(&round.outcome.kept))?;
    fs::write(dir.join("round.json"), serde_json::to_string_pretty(&round.metadata(fraction))?)?;
    Ok(())
}

/// Runs the full loop. Round `i` trains `Iter{i}` from scratch with a seed
/// derived from `(seed, i)`; the dev corpus, when given, is the fixed
/// convergence monitor for every round. Artifacts go to `run_dir` if set.
pub fn run_distillation(
    corpus: &ParallelCorpus,
    dev: Option<&ParallelCorpus>,
    config: &DistillConfig,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<DistillationRun> {
    config.validate()?;
    let mut current = corpus.clone();
    let mut pool = ModelPool::default();
    let mut rounds = Vec::new();
    let mut status = RunStatus::Complete;
    for iteration in 1..=config.iterations {
        if current.is_empty() {
            return Err(Error::Usage(format!("corpus exhausted before round {iteration}")));
        }
        let train_seed = seed::derive(seed, "train", iteration as u64);
        let decode_seed = seed::derive(seed, "decode", iteration as u64);
        let (mut model, train_report) = seq2seq::train(&current, dev, config.model, &config.train, train_seed)?;
        model.set_iteration(iteration);
        let outcome = distill_round(&current, &model, config.removal_fraction, config, decode_seed)?;
        info!(
            "round {iteration}: {} examples, {} frequent responses, removing {}",
            current.len(),
            outcome.frequent.len(),
            outcome.removed.len()
        );
        let round = DistillationRound { iteration, input_size: current.len(), train_seed, decode_seed, train_report, outcome };
        if let Some(dir) = run_dir {
            write_round(dir, &round, &model, config.removal_fraction)?;
        }
        let removed: BTreeSet<ExampleId> = round.outcome.removed.iter().copied().collect();
        let saturated = round.outcome.saturated;
        pool.train_sizes.push(current.len());
        pool.models.push(model);
        rounds.push(round);
        if saturated {
            if iteration < config.iterations {
                warn!("no response exceeded the frequency threshold in round {iteration}; stopping early");
                status = RunStatus::Saturated;
            }
            break;
        }
        current = current.without(&removed);
    }
    Ok(DistillationRun { pool, rounds, status })
}
