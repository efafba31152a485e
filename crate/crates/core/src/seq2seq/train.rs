use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{GenerationModel, ModelConfig};
use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::nn::{sgd_step, HalvingSchedule, Parameterized};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a dev improvement.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1.0, clip_norm: 5.0, batch_size: 32, max_epochs: 20, patience: 2 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(format!("invalid training configuration: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Monitor-set perplexity of the freshly initialized model.
    pub initial_ppl: f64,
    /// Best monitor-set perplexity; the returned model is the one that reached it.
    pub best_ppl: f64,
    /// Mean training NLL per token, one entry per epoch.
    pub train_loss: Vec<f64>,
}

/// `exp` of the mean per-token negative log-likelihood, end-of-sequence
/// included. Returns NaN on an empty corpus.
pub fn perplexity(model: &GenerationModel, corpus: &ParallelCorpus) -> f64 {
    let (nll, tokens) = corpus.iter().fold((0.0, 0usize), |(nll, n), e| {
        (nll - model.target_logprob(&e.source, &e.target), n + e.target.len() + 1)
    });
    (nll / tokens as f64).exp()
}

/// Trains a fresh model by minibatch SGD.
///
/// Gradients are averaged over the examples of a batch and clipped to
/// `clip_norm`. After every epoch the perplexity on `dev` (or on the
/// training corpus when `dev` is `None` or empty) is measured; a
/// non-improving epoch halves the learning rate, and `patience` of them in a
/// row end training. The best model seen is returned.
pub fn train(
    corpus: &ParallelCorpus,
    dev: Option<&ParallelCorpus>,
    model_config: ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<(GenerationModel, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Usage("cannot train on an empty corpus".into()));
    }
    config.validate()?;
    let monitor = match dev {
        Some(d) if !d.is_empty() => d,
        _ => corpus,
    };
    let mut model = GenerationModel::new(std::sync::Arc::clone(corpus.vocab()), model_config, seed::derive(seed, "init", 0))?;
    let initial_ppl = perplexity(&model, monitor);
    let mut best = model.clone();
    let mut best_ppl = initial_ppl;
    let mut schedule = HalvingSchedule::new(config.learning_rate);
    schedule.observe(initial_ppl);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::new();
    let mut epochs = 0;
    for epoch in 0..config.max_epochs {
        epochs = epoch + 1;
        order.shuffle(&mut seed::derived_rng(seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        let mut tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            let mut batch_loss = 0.0;
            for &k in batch {
                let e = &corpus.examples()[k];
                batch_loss += model.loss_and_grad(&e.source, &e.target);
                tokens += e.target.len() + 1;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epochs}")));
            }
            total += batch_loss;
            model.scale_grad(1.0 / batch.len() as f64);
            sgd_step(&mut model.params_mut(), schedule.lr(), config.clip_norm)?;
        }
        let train_loss = total / tokens as f64;
        history.push(train_loss);
        let ppl = perplexity(&model, monitor);
        debug!("epoch {epochs}: train nll/token {train_loss:.4}, monitor ppl {ppl:.3}, lr {}", schedule.lr());
        if !ppl.is_finite() {
            return Err(Error::Training(format!("monitor perplexity diverged in epoch {epochs}")));
        }
        if schedule.observe(ppl) {
            best = model.clone();
            best_ppl = ppl;
        } else if schedule.stale() >= config.patience {
            break;
        }
    }
    info!("trained {epochs} epochs on {} examples: ppl {initial_ppl:.3} -> {best_ppl:.3}", corpus.len());
    Ok((best, TrainReport { epochs, initial_ppl, best_ppl, train_loss: history }))
}
