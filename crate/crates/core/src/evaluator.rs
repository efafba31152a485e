//! Hierarchical human-vs-machine dialogue classifier.
//!
//! Each utterance (tokens plus end-of-sequence) is read by a shared
//! utterance LSTM; the two final states are fed in order to a dialogue LSTM
//! whose last state goes through a linear layer and a sigmoid.

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{restore, Checkpoint, LayerRecord};
use crate::corpus::{ParallelCorpus, TokenId, EOS};
use crate::error::{Error, Result};
use crate::nn::ops::sigmoid;
use crate::nn::seq::{backprop_tokens, encode_tokens, final_state};
use crate::nn::{sgd_step, Embedding, LayerKind, Linear, LstmCell, Param, Parameterized};
use crate::seed;
use crate::seq2seq::{DecodeStrategy, Responder};

pub const CHECKPOINT_KIND: &str = "evaluator";

/// Scores at or above this are read as "human".
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Provenance {
    /// A (source, target) pair taken from the corpus.
    Corpus,
    /// Response produced by pool model `index` (0-based).
    Pool { index: usize },
    /// Human utterance paired with a source it was not written for.
    RandomHuman,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Human,
    Machine,
}

impl Provenance {
    pub fn label(self) -> Label {
        match self {
            Provenance::Pool { .. } => Label::Machine,
            _ => Label::Human,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub source: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub provenance: Provenance,
}

impl DialoguePair {
    pub fn label(&self) -> Label {
        self.provenance.label()
    }
}

/// What the classifier's positive class means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluatorTask {
    /// Positive = human corpus response, negative = machine response.
    HumanVsMachine,
    /// Positive = machine response, negative = randomly paired human utterance.
    MachineVsRandom,
}

impl EvaluatorTask {
    /// Training target in {0, 1}, or `None` if the pair does not belong to this task.
    pub fn target(self, p: &DialoguePair) -> Option<f64> {
        match (self, p.provenance) {
            (EvaluatorTask::HumanVsMachine, Provenance::Corpus) => Some(1.0),
            (EvaluatorTask::HumanVsMachine, Provenance::Pool { .. }) => Some(0.0),
            (EvaluatorTask::MachineVsRandom, Provenance::Pool { .. }) => Some(1.0),
            (EvaluatorTask::MachineVsRandom, Provenance::RandomHuman) => Some(0.0),
            _ => None,
        }
    }
}

/// Anything producing a probability for a (source, response) pair.
pub trait Scorer {
    fn score(&self, source: &[TokenId], response: &[TokenId]) -> f64;
}

impl<F: Fn(&[TokenId], &[TokenId]) -> f64> Scorer for F {
    fn score(&self, source: &[TokenId], response: &[TokenId]) -> f64 {
        self(source, response)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of the dataset held out for the reported accuracy.
    pub heldout_fraction: f64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self { embed_dim: 64, hidden_dim: 128, learning_rate: 0.5, clip_norm: 5.0, batch_size: 16, epochs: 8, heldout_fraction: 0.1 }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(format!("evaluator sizes must be positive: {self:?}")));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Config(format!("invalid evaluator optimizer settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Evaluator {
    pub task: EvaluatorTask,
    pub embed: Embedding,
    pub utterance: LstmCell,
    pub dialogue: LstmCell,
    pub classifier: Linear,
}

fn with_eos(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut v = tokens.to_vec();
    v.push(EOS);
    v
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Evaluator {
    pub fn new(task: EvaluatorTask, vocab_size: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        Self {
            task,
            embed: Embedding::new("embed", vocab_size, embed_dim, 1.0, &mut rng),
            utterance: LstmCell::new("utterance", embed_dim, hidden_dim, glorot(embed_dim + hidden_dim, 4 * hidden_dim), &mut rng),
            dialogue: LstmCell::new("dialogue", hidden_dim, hidden_dim, glorot(2 * hidden_dim, 4 * hidden_dim), &mut rng),
            classifier: Linear::new("classifier", hidden_dim, 1, glorot(hidden_dim, 1), &mut rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.table.shape()[0]
    }

    fn logit(&self, source: &[TokenId], response: &[TokenId]) -> f64 {
        let us = final_state(&self.embed, &self.utterance, &with_eos(source));
        let ur = final_state(&self.embed, &self.utterance, &with_eos(response));
        let hd = self.dialogue.hidden_dim();
        let (h1, c1) = self.dialogue.step(&us, &vec![0.0; hd], &vec![0.0; hd]);
        let (h2, _) = self.dialogue.step(&ur, &h1, &c1);
        self.classifier.forward(&h2)[0]
    }

    /// Cross-entropy against `target` in {0, 1}; accumulates gradients.
    pub fn loss_and_grad(&mut self, source: &[TokenId], response: &[TokenId], target: f64) -> f64 {
        let (src, resp) = (with_eos(source), with_eos(response));
        let (us, _, cs) = encode_tokens(&self.embed, &self.utterance, &src);
        let (ur, _, cr) = encode_tokens(&self.embed, &self.utterance, &resp);
        let hd = self.dialogue.hidden_dim();
        let zeros = vec![0.0; hd];
        let (h1, c1, d1) = self.dialogue.forward(&us, &zeros, &zeros);
        let (h2, _, d2) = self.dialogue.forward(&ur, &h1, &c1);
        let logit = self.classifier.forward(&h2)[0];
        let loss = target * softplus(-logit) + (1.0 - target) * softplus(logit);
        let dlogit = sigmoid(logit) - target;
        let dh2 = self.classifier.backward(&h2, &[dlogit]);
        let (dur, dh1, dc1) = self.dialogue.backward(&d2, &dh2, &zeros);
        let (dus, _, _) = self.dialogue.backward(&d1, &dh1, &dc1);
        backprop_tokens(&mut self.embed, &mut self.utterance, &resp, &cr, &dur, &zeros);
        backprop_tokens(&mut self.embed, &mut self.utterance, &src, &cs, &dus, &zeros);
        loss
    }

    pub fn to_checkpoint(&self, config: &EvaluatorConfig) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, json!({ "task": self.task, "config": config }));
        ck.push(LayerRecord::new("embed", self.embed.spec(), self.embed.params()));
        ck.push(LayerRecord::new("utterance", self.utterance.spec(), self.utterance.params()));
        ck.push(LayerRecord::new("dialogue", self.dialogue.spec(), self.dialogue.params()));
        ck.push(LayerRecord::new("classifier", self.classifier.spec(), self.classifier.params()));
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<(Self, EvaluatorConfig)> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let task: EvaluatorTask = serde_json::from_value(ck.meta["task"].clone())?;
        let config: EvaluatorConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let embed = ck.take_layer("embed", LayerKind::Embedding)?;
        let mut ev = Self::new(task, embed.spec.input_dim, config.embed_dim, config.hidden_dim, 0);
        restore(embed, ev.embed.params_mut())?;
        restore(ck.take_layer("utterance", LayerKind::LstmCell)?, ev.utterance.params_mut())?;
        restore(ck.take_layer("dialogue", LayerKind::LstmCell)?, ev.dialogue.params_mut())?;
        restore(ck.take_layer("classifier", LayerKind::Linear)?, ev.classifier.params_mut())?;
        Ok((ev, config))
    }

    pub fn save(&self, config: &EvaluatorConfig, path: &Path) -> Result<()> {
        self.to_checkpoint(config).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, EvaluatorConfig)> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

impl Scorer for Evaluator {
    /// Probability of the positive class; for a human-vs-machine evaluator
    /// this is P(human | source, response), the policy reward.
    fn score(&self, source: &[TokenId], response: &[TokenId]) -> f64 {
        sigmoid(self.logit(source, response))
    }
}

impl Parameterized for Evaluator {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.embed.params();
        v.extend(self.utterance.params());
        v.extend(self.dialogue.params());
        v.extend(self.classifier.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embed.params_mut();
        v.extend(self.utterance.params_mut());
        v.extend(self.dialogue.params_mut());
        v.extend(self.classifier.params_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorReport {
    pub train_size: usize,
    pub heldout_size: usize,
    pub heldout_accuracy: f64,
    /// Mean cross-entropy per pair, one entry per epoch.
    pub train_loss: Vec<f64>,
}

/// Trains on a seeded split of `dataset` and reports held-out accuracy.
/// Pairs that do not belong to `task` are rejected.
pub fn train_evaluator(
    dataset: &[DialoguePair],
    task: EvaluatorTask,
    vocab_size: usize,
    config: &EvaluatorConfig,
    seed: u64,
) -> Result<(Evaluator, EvaluatorReport)> {
    config.validate()?;
    let targets = dataset
        .iter()
        .map(|p| task.target(p).ok_or_else(|| Error::Usage(format!("{:?} pair is not part of a {task:?} dataset", p.provenance))))
        .collect::<Result<Vec<f64>>>()?;
    if !(targets.contains(&0.0) && targets.contains(&1.0)) {
        return Err(Error::Usage("evaluator training needs both labels".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seed::derived_rng(seed, "split", 0));
    let n_held = ((dataset.len() as f64) * config.heldout_fraction).round() as usize;
    let (held, train) = order.split_at(n_held);
    let mut train = train.to_vec();
    let mut ev = Evaluator::new(task, vocab_size, config.embed_dim, config.hidden_dim, seed::derive(seed, "init", 0));
    let mut history = Vec::new();
    for epoch in 0..config.epochs {
        train.shuffle(&mut seed::derived_rng(seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        for batch in train.chunks(config.batch_size) {
            ev.zero_grad();
            for &k in batch {
                total += ev.loss_and_grad(&dataset[k].source, &dataset[k].response, targets[k]);
            }
            if !total.is_finite() {
                return Err(Error::Training(format!("non-finite evaluator loss in epoch {}", epoch + 1)));
            }
            ev.scale_grad(1.0 / batch.len() as f64);
            sgd_step(&mut ev.params_mut(), config.learning_rate, config.clip_norm)?;
        }
        history.push(total / train.len().max(1) as f64);
    }
    let held_pairs: Vec<DialoguePair> = held.iter().map(|&k| dataset[k].clone()).collect();
    let heldout_accuracy = if held_pairs.is_empty() { f64::NAN } else { accuracy(&ev, &held_pairs, task)? };
    info!("{task:?} evaluator: {} training pairs, held-out accuracy {heldout_accuracy:.3}", train.len());
    Ok((ev, EvaluatorReport { train_size: train.len(), heldout_size: held.len(), heldout_accuracy, train_loss: history }))
}

/// Fraction of pairs whose thresholded score agrees with the task's target.
pub fn accuracy<S: Scorer + ?Sized>(scorer: &S, pairs: &[DialoguePair], task: EvaluatorTask) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Usage("accuracy of an empty pair set".into()));
    }
    let mut correct = 0usize;
    for p in pairs {
        let y = task.target(p).ok_or_else(|| Error::Usage(format!("{:?} pair is not part of a {task:?} dataset", p.provenance)))?;
        let positive = scorer.score(&p.source, &p.response) >= DECISION_THRESHOLD;
        correct += usize::from(positive == (y == 1.0));
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Fraction of machine pairs a human-vs-machine evaluator scores as human.
pub fn adversuc<S: Scorer + ?Sized>(evaluator: &S, machine_pairs: &[DialoguePair]) -> Result<f64> {
    if machine_pairs.is_empty() {
        return Err(Error::Usage("adversarial success of an empty pair set".into()));
    }
    if machine_pairs.iter().any(|p| p.label() != Label::Machine) {
        return Err(Error::Usage("adversarial success is defined on machine pairs only".into()));
    }
    let fooled = machine_pairs.iter().filter(|p| evaluator.score(&p.source, &p.response) >= DECISION_THRESHOLD).count();
    Ok(fooled as f64 / machine_pairs.len() as f64)
}

/// Accuracy of a machine-vs-random evaluator over both pair sets together.
pub fn machine_vs_random<S: Scorer + ?Sized>(evaluator: &S, machine_pairs: &[DialoguePair], random_pairs: &[DialoguePair]) -> Result<f64> {
    let all: Vec<DialoguePair> = machine_pairs.iter().chain(random_pairs).cloned().collect();
    accuracy(evaluator, &all, EvaluatorTask::MachineVsRandom)
}

fn pick_examples(corpus: &ParallelCorpus, n: usize, rng: &mut seed::Rng) -> Result<Vec<usize>> {
    if corpus.is_empty() {
        return Err(Error::Usage("cannot draw dialogue pairs from an empty corpus".into()));
    }
    Ok(if n <= corpus.len() {
        rand::seq::index::sample(rng, corpus.len(), n).into_vec()
    } else {
        (0..n).map(|_| rng.gen_range(0..corpus.len())).collect()
    })
}

/// Responses from pool models chosen uniformly per source. The pool index
/// and the per-pair decode seed are both drawn from `seed`, so every pair
/// can be replayed.
pub fn machine_pairs<R: Responder>(sources: &[Vec<TokenId>], pool: &[R], strategy: DecodeStrategy, seed: u64) -> Result<Vec<DialoguePair>> {
    if pool.is_empty() {
        return Err(Error::Usage("machine pairs need a non-empty pool".into()));
    }
    let mut rng = seed::derived_rng(seed, "pool-pick", 0);
    Ok(sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let index = rng.gen_range(0..pool.len());
            let response = pool[index].respond(s, strategy, &mut seed::derived_rng(seed, "decode", i as u64));
            DialoguePair { source: s.clone(), response, provenance: Provenance::Pool { index } }
        })
        .collect())
}

/// `n` corpus pairs and `n` greedy machine responses to the same sources.
pub fn build_eval_dataset<R: Responder>(corpus: &ParallelCorpus, pool: &[R], n: usize, seed: u64) -> Result<Vec<DialoguePair>> {
    let picks = pick_examples(corpus, n, &mut seed::derived_rng(seed, "examples", 0))?;
    let examples = corpus.examples();
    let sources: Vec<Vec<TokenId>> = picks.iter().map(|&k| examples[k].source.clone()).collect();
    let mut out: Vec<DialoguePair> = picks
        .iter()
        .map(|&k| DialoguePair { source: examples[k].source.clone(), response: examples[k].target.clone(), provenance: Provenance::Corpus })
        .collect();
    out.extend(machine_pairs(&sources, pool, DecodeStrategy::Greedy, seed)?);
    Ok(out)
}

/// Pairs each source with the target of a different, uniformly drawn corpus example.
pub fn random_pairs(sources: &[Vec<TokenId>], corpus: &ParallelCorpus, seed: u64) -> Result<Vec<DialoguePair>> {
    if corpus.is_empty() {
        return Err(Error::Usage("cannot draw random responses from an empty corpus".into()));
    }
    let mut rng = seed::derived_rng(seed, "random-human", 0);
    let examples = corpus.examples();
    Ok(sources
        .iter()
        .map(|s| {
            let mut k = rng.gen_range(0..examples.len());
            if examples.len() > 1 && examples[k].source == *s {
                k = (k + 1 + rng.gen_range(0..examples.len() - 1)) % examples.len();
            }
            DialoguePair { source: s.clone(), response: examples[k].target.clone(), provenance: Provenance::RandomHuman }
        })
        .collect())
}

/// Sources of `n` seeded corpus examples.
pub fn sample_sources(corpus: &ParallelCorpus, n: usize, seed: u64) -> Result<Vec<Vec<TokenId>>> {
    let picks = pick_examples(corpus, n, &mut seed::derived_rng(seed, "sources", 0))?;
    Ok(picks.iter().map(|&k| corpus.examples()[k].source.clone()).collect())
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 { (6.0 / (fan_in + fan_out) as f64).sqrt() }
