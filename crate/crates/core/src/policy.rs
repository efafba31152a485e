//! REINFORCE model selector.
//!
//! `pi(g_j | X) = softmax_j(h_X . v_j)`, where `h_X` is the final state of
//! a fresh LSTM over the input and `v_j` is a learned vector per pool model.
//! Updates ascend `(R - b(X)) grad log pi(g | X)`; the baseline `b` is a
//! one-hidden-layer regressor on a detached `h_X`.

use std::path::Path;

use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{restore, Checkpoint, LayerRecord};
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::evaluator::Scorer;
use crate::nn::ops::{argmax, dot, softmax};
use crate::nn::seq::{backprop_tokens, encode_tokens, final_state};
use crate::nn::{sgd_step, Embedding, LayerKind, LayerSpec, Linear, LstmCell, Param, Parameterized, INIT_SCALE};
use crate::seed;
use crate::seq2seq::{DecodeStrategy, Responder};

pub const CHECKPOINT_KIND: &str = "policy";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub baseline_hidden: usize,
    pub learning_rate: f64,
    pub baseline_learning_rate: f64,
    pub clip_norm: f64,
    pub episodes: usize,
    /// How the selected model decodes during training episodes.
    pub strategy: DecodeStrategy,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 32,
            baseline_hidden: 16,
            learning_rate: 0.5,
            baseline_learning_rate: 0.1,
            clip_norm: 5.0,
            episodes: 2000,
            strategy: DecodeStrategy::Greedy,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.baseline_hidden == 0 {
            return Err(Error::Config(format!("policy sizes must be positive: {self:?}")));
        }
        if !(self.learning_rate > 0.0) || !(self.baseline_learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("invalid policy optimizer settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PolicySelector {
    pub embed: Embedding,
    pub encoder: LstmCell,
    /// One row per pool model.
    pub model_vectors: Param,
}

impl PolicySelector {
    pub fn new(vocab_size: usize, pool_size: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if pool_size == 0 {
            return Err(Error::Usage("policy needs a pool of at least one model".into()));
        }
        let mut rng = seed::rng(seed);
        Ok(Self {
            embed: Embedding::new("embed", vocab_size, embed_dim, INIT_SCALE, &mut rng),
            encoder: LstmCell::new("encoder", embed_dim, hidden_dim, INIT_SCALE, &mut rng),
            model_vectors: Param::uniform("model_vectors", &[pool_size, hidden_dim], INIT_SCALE, &mut rng),
        })
    }

    pub fn pool_size(&self) -> usize {
        self.model_vectors.shape()[0]
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.table.shape()[0]
    }

    /// `h_X`: final encoder state over the input tokens.
    pub fn encode(&self, source: &[TokenId]) -> Vec<f64> {
        final_state(&self.embed, &self.encoder, source)
    }

    pub fn logits_for(&self, h: &[f64]) -> Vec<f64> {
        (0..self.pool_size()).map(|j| dot(h, self.model_vectors.row(j))).collect()
    }

    pub fn distribution(&self, source: &[TokenId]) -> Vec<f64> {
        softmax(&self.logits_for(&self.encode(source)))
    }

    /// Adds `scale * grad log pi(action | source)` to the parameter gradients
    /// and returns `log pi(action | source)`.
    pub fn accumulate_log_prob_grad(&mut self, source: &[TokenId], action: usize, scale: f64) -> f64 {
        let (h, _, caches) = encode_tokens(&self.embed, &self.encoder, source);
        let probs = softmax(&self.logits_for(&h));
        let dlogits = score_function_gradient(&probs, action, scale);
        let hd = h.len();
        let mut dh = vec![0.0; hd];
        for (j, &d) in dlogits.iter().enumerate() {
            let row = self.model_vectors.row(j).to_vec();
            for k in 0..hd {
                dh[k] += d * row[k];
            }
            for (g, &x) in self.model_vectors.grad_row_mut(j).iter_mut().zip(&h) {
                *g += d * x;
            }
        }
        backprop_tokens(&mut self.embed, &mut self.encoder, source, &caches, &dh, &vec![0.0; hd]);
        probs[action].ln()
    }
}

impl Parameterized for PolicySelector {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.embed.params();
        v.extend(self.encoder.params());
        v.push(&self.model_vectors);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embed.params_mut();
        v.extend(self.encoder.params_mut());
        v.push(&mut self.model_vectors);
        v
    }
}

/// `b(X) = w2 . tanh(W1 h_X + b1) + b2`.
#[derive(Clone, Debug)]
pub struct BaselineEstimator {
    pub hidden: Linear,
    pub output: Linear,
}

impl BaselineEstimator {
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        Self { hidden: Linear::new("baseline.hidden", input_dim, hidden_dim, INIT_SCALE, &mut rng), output: Linear::new("baseline.output", hidden_dim, 1, INIT_SCALE, &mut rng) }
    }

    pub fn predict(&self, h: &[f64]) -> f64 {
        let a: Vec<f64> = self.hidden.forward(h).iter().map(|v| v.tanh()).collect();
        self.output.forward(&a)[0]
    }

    /// Accumulates gradients of `0.5 (b - reward)^2`; returns `b`.
    pub fn accumulate_grad(&mut self, h: &[f64], reward: f64) -> f64 {
        let a: Vec<f64> = self.hidden.forward(h).iter().map(|v| v.tanh()).collect();
        let b = self.output.forward(&a)[0];
        let da = self.output.backward(&a, &[b - reward]);
        let dz: Vec<f64> = da.iter().zip(&a).map(|(d, t)| d * (1.0 - t * t)).collect();
        self.hidden.backward(h, &dz);
        b
    }
}

impl Parameterized for BaselineEstimator {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.hidden.params();
        v.extend(self.output.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.hidden.params_mut();
        v.extend(self.output.params_mut());
        v
    }
}

/// `advantage * d log softmax(z)[action] / dz = advantage * (onehot(action) - probs)`.
pub fn score_function_gradient(probs: &[f64], action: usize, advantage: f64) -> Vec<f64> {
    probs.iter().enumerate().map(|(j, &p)| advantage * (f64::from(u8::from(j == action)) - p)).collect()
}

pub fn policy_distribution(policy: &PolicySelector, source: &[TokenId]) -> Vec<f64> {
    policy.distribution(source)
}

/// Test-time choice: most probable model, ties to the lower index.
pub fn select_model(policy: &PolicySelector, source: &[TokenId]) -> usize {
    argmax(&policy.logits_for(&policy.encode(source)))
}

pub fn sample_model<R: Rng>(policy: &PolicySelector, source: &[TokenId], rng: &mut R) -> usize {
    sample_index(&policy.distribution(source), rng)
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = j;
            acc += p;
            if u < acc {
                return j;
            }
        }
    }
    last
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub baseline: f64,
    pub advantage: f64,
    pub log_prob: f64,
}

/// One REINFORCE update for an observed `(source, action, reward)`.
pub fn reinforce_step(
    policy: &mut PolicySelector,
    baseline: &mut BaselineEstimator,
    source: &[TokenId],
    action: usize,
    reward: f64,
    config: &PolicyConfig,
) -> Result<StepOutcome> {
    if action >= policy.pool_size() {
        return Err(Error::Usage(format!("model index {action} outside a pool of {}", policy.pool_size())));
    }
    let h = policy.encode(source);
    baseline.zero_grad();
    let b = baseline.accumulate_grad(&h, reward);
    let advantage = reward - b;
    policy.zero_grad();
    // Gradient ascent on the surrogate: descend on its negation.
    let log_prob = policy.accumulate_log_prob_grad(source, action, -advantage);
    sgd_step(&mut policy.params_mut(), config.learning_rate, config.clip_norm)?;
    sgd_step(&mut baseline.params_mut(), config.baseline_learning_rate, config.clip_norm)?;
    Ok(StepOutcome { baseline: b, advantage, log_prob })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub episodes: usize,
    pub mean_reward: f64,
    /// Mean reward over consecutive windows of 100 episodes.
    pub reward_curve: Vec<f64>,
    /// Times each pool index was sampled during training.
    pub action_counts: Vec<usize>,
}

/// Runs `config.episodes` episodes on inputs drawn uniformly from `inputs`:
/// sample a model from the policy, decode with it, score the response and
/// apply [`reinforce_step`].
pub fn train_policy<R: Responder, S: Scorer + ?Sized>(
    policy: &mut PolicySelector,
    baseline: &mut BaselineEstimator,
    pool: &[R],
    scorer: &S,
    inputs: &[Vec<TokenId>],
    config: &PolicyConfig,
    seed: u64,
) -> Result<PolicyReport> {
    config.validate()?;
    if pool.len() != policy.pool_size() {
        return Err(Error::Usage(format!("policy has {} model vectors for a pool of {}", policy.pool_size(), pool.len())));
    }
    if inputs.is_empty() {
        return Err(Error::Usage("policy training needs at least one input".into()));
    }
    let mut rng = seed::derived_rng(seed, "episodes", 0);
    let mut report = PolicyReport { action_counts: vec![0; pool.len()], ..Default::default() };
    let mut window = Vec::new();
    let mut total = 0.0;
    for episode in 0..config.episodes {
        let x = &inputs[rng.gen_range(0..inputs.len())];
        let action = sample_model(policy, x, &mut rng);
        let response = pool[action].respond(x, config.strategy, &mut seed::derived_rng(seed, "decode", episode as u64));
        let reward = scorer.score(x, &response);
        reinforce_step(policy, baseline, x, action, reward, config)?;
        report.action_counts[action] += 1;
        total += reward;
        window.push(reward);
        if window.len() == 100 {
            report.reward_curve.push(window.iter().sum::<f64>() / 100.0);
            window.clear();
        }
    }
    report.episodes = config.episodes;
    report.mean_reward = if config.episodes == 0 { 0.0 } else { total / config.episodes as f64 };
    info!("policy: {} episodes, mean reward {:.3}, actions {:?}", report.episodes, report.mean_reward, report.action_counts);
    Ok(report)
}

/// Fraction of `inputs` for which each pool index is the test-time choice.
pub fn selection_histogram(policy: &PolicySelector, inputs: &[Vec<TokenId>]) -> Vec<f64> {
    let mut counts = vec![0usize; policy.pool_size()];
    for x in inputs {
        counts[select_model(policy, x)] += 1;
    }
    counts.iter().map(|&c| c as f64 / inputs.len().max(1) as f64).collect()
}

pub fn to_checkpoint(policy: &PolicySelector, baseline: &BaselineEstimator, config: &PolicyConfig) -> Checkpoint {
    let mut ck = Checkpoint::new(CHECKPOINT_KIND, json!({ "config": config, "pool_size": policy.pool_size() }));
    ck.push(LayerRecord::new("embed", policy.embed.spec(), policy.embed.params()));
    ck.push(LayerRecord::new("encoder", policy.encoder.spec(), policy.encoder.params()));
    let (g, h) = (policy.pool_size(), policy.model_vectors.shape()[1]);
    ck.push(LayerRecord::new("model_vectors", LayerSpec { kind: LayerKind::Embedding, input_dim: g, output_dim: h }, vec![&policy.model_vectors]));
    ck.push(LayerRecord::new("baseline.hidden", baseline.hidden.spec(), baseline.hidden.params()));
    ck.push(LayerRecord::new("baseline.output", baseline.output.spec(), baseline.output.params()));
    ck
}

pub fn from_checkpoint(mut ck: Checkpoint) -> Result<(PolicySelector, BaselineEstimator, PolicyConfig)> {
    ck.expect_kind(CHECKPOINT_KIND)?;
    let config: PolicyConfig = serde_json::from_value(ck.meta["config"].clone())?;
    let embed = ck.take_layer("embed", LayerKind::Embedding)?;
    let vectors = ck.take_layer("model_vectors", LayerKind::Embedding)?;
    let mut policy = PolicySelector::new(embed.spec.input_dim, vectors.spec.input_dim, config.embed_dim, config.hidden_dim, 0)?;
    let mut baseline = BaselineEstimator::new(config.hidden_dim, config.baseline_hidden, 0);
    restore(embed, policy.embed.params_mut())?;
    restore(ck.take_layer("encoder", LayerKind::LstmCell)?, policy.encoder.params_mut())?;
    restore(vectors, vec![&mut policy.model_vectors])?;
    restore(ck.take_layer("baseline.hidden", LayerKind::Linear)?, baseline.hidden.params_mut())?;
    restore(ck.take_layer("baseline.output", LayerKind::Linear)?, baseline.output.params_mut())?;
    Ok((policy, baseline, config))
}

pub fn save(policy: &PolicySelector, baseline: &BaselineEstimator, config: &PolicyConfig, path: &Path) -> Result<()> {
    to_checkpoint(policy, baseline, config).save(path)
}

pub fn load(path: &Path) -> Result<(PolicySelector, BaselineEstimator, PolicyConfig)> {
    from_checkpoint(Checkpoint::load(path)?)
}
