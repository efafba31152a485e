use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::sampling::{self, DecodeStrategy};
use crate::checkpoint::{restore, Checkpoint, LayerRecord};
use crate::corpus::{TokenId, Vocabulary, BOS, EOS, RESERVED};
use crate::error::{Error, Result};
use crate::nn::{Attention, Embedding, LayerKind, Linear, LstmCache, LstmCell, Param, Parameterized, SoftmaxProjection, INIT_SCALE};
use crate::seed;

pub const CHECKPOINT_KIND: &str = "seq2seq";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Decoding stops after this many tokens even without end-of-sequence.
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { embed_dim: 64, hidden_dim: 128, max_decode_len: 50 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_decode_len == 0 {
            return Err(Error::Config(format!("model dims and length cap must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// A decoded response. `tokens` includes the final end-of-sequence id when
/// one was produced; `log_probs[t]` is the model's log-probability of `tokens[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub tokens: Vec<TokenId>,
    pub log_probs: Vec<f64>,
}

impl DecodeResult {
    /// The response without its end-of-sequence marker.
    pub fn response(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Encoder outputs reused by every decoder step.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub states: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DecoderState {
    h: Vec<f64>,
    c: Vec<f64>,
}

/// Attention-based LSTM encoder–decoder.
///
/// The decoder starts from the encoder's final state; at each step its hidden
/// state attends over the encoder states, `[context; h]` goes through a tanh
/// layer and then the vocabulary softmax.
#[derive(Clone, Debug)]
pub struct GenerationModel {
    vocab: Arc<Vocabulary>,
    config: ModelConfig,
    iteration: usize,
    pub src_embed: Embedding,
    pub tgt_embed: Embedding,
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub attention: Attention,
    pub combine: Linear,
    pub output: SoftmaxProjection,
}

struct StepTrace {
    input: TokenId,
    target: TokenId,
    cache: LstmCache,
    h: Vec<f64>,
    weights: Vec<f64>,
    cat: Vec<f64>,
    act: Vec<f64>,
    log_probs: Vec<f64>,
}

impl GenerationModel {
    /// Fresh model with uniform `[-0.1, 0.1]` initialization.
    pub fn new(vocab: Arc<Vocabulary>, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        let (v, e, h) = (vocab.len(), config.embed_dim, config.hidden_dim);
        Ok(Self {
            src_embed: Embedding::new("src_embed", v, e, INIT_SCALE, &mut rng),
            tgt_embed: Embedding::new("tgt_embed", v, e, INIT_SCALE, &mut rng),
            encoder: LstmCell::new("encoder", e, h, INIT_SCALE, &mut rng),
            decoder: LstmCell::new("decoder", e, h, INIT_SCALE, &mut rng),
            attention: Attention::new(h),
            combine: Linear::new("combine", 2 * h, h, INIT_SCALE, &mut rng),
            output: SoftmaxProjection::new("output", h, v, INIT_SCALE, &mut rng),
            vocab,
            config,
            iteration: 0,
        })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Distillation round that produced this model (1-based; 0 if untagged).
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn set_iteration(&mut self, iteration: usize) {
        self.iteration = iteration;
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| !self.vocab.is_valid(t)) {
            Some(t) => Err(Error::Usage(format!("token id {t} outside the vocabulary"))),
            None => Ok(()),
        }
    }

    pub fn encode(&self, source: &[TokenId]) -> Encoded {
        let hd = self.config.hidden_dim;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut states = Vec::with_capacity(source.len());
        for &t in source {
            let (h2, c2) = self.encoder.step(self.src_embed.lookup(t), &h, &c);
            states.push(h2.clone());
            h = h2;
            c = c2;
        }
        Encoded { states, h, c }
    }

    /// Final encoder hidden state of `tokens`.
    pub fn encode_sentence(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Usage("cannot embed an empty sentence".into()));
        }
        self.check_tokens(tokens)?;
        Ok(self.encode(tokens).h)
    }

    pub fn start(&self, enc: &Encoded) -> DecoderState {
        DecoderState { h: enc.h.clone(), c: enc.c.clone() }
    }

    /// Feeds `input` and returns the next-token log-probabilities.
    pub fn step(&self, enc: &Encoded, state: &DecoderState, input: TokenId) -> (Vec<f64>, DecoderState) {
        let (h, c) = self.decoder.step(self.tgt_embed.lookup(input), &state.h, &state.c);
        let (ctx, _) = self.attention.forward(&h, &enc.states);
        let mut cat = ctx;
        cat.extend_from_slice(&h);
        let act: Vec<f64> = self.combine.forward(&cat).iter().map(|v| v.tanh()).collect();
        (self.output.log_probs(&act), DecoderState { h, c })
    }

    /// Log-probabilities of the token following `prefix` (which excludes the start marker).
    pub fn next_token_log_probs(&self, source: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let enc = self.encode(source);
        let (mut lp, mut state) = self.step(&enc, &self.start(&enc), BOS);
        for &t in prefix {
            (lp, state) = self.step(&enc, &state, t);
        }
        lp
    }

    /// Per-token log-probabilities of `target` followed by end-of-sequence.
    pub fn target_token_log_probs(&self, source: &[TokenId], target: &[TokenId]) -> Vec<f64> {
        let enc = self.encode(source);
        let mut state = self.start(&enc);
        let mut input = BOS;
        let mut out = Vec::with_capacity(target.len() + 1);
        for &t in target.iter().chain(std::iter::once(&EOS)) {
            let (lp, s) = self.step(&enc, &state, input);
            out.push(lp[t as usize]);
            state = s;
            input = t;
        }
        out
    }

    /// Teacher-forced log-probability of `target` (end-of-sequence included).
    pub fn target_logprob(&self, source: &[TokenId], target: &[TokenId]) -> f64 {
        self.target_token_log_probs(source, target).iter().sum()
    }

    pub fn decode<R: Rng>(&self, source: &[TokenId], strategy: DecodeStrategy, rng: &mut R) -> DecodeResult {
        let enc = self.encode(source);
        let mut state = self.start(&enc);
        let mut input = BOS;
        let mut tokens = Vec::new();
        let mut log_probs = Vec::new();
        while tokens.len() < self.config.max_decode_len {
            let (lp, s) = self.step(&enc, &state, input);
            let tok = sampling::pick(strategy, &lp, rng) as TokenId;
            tokens.push(tok);
            log_probs.push(lp[tok as usize]);
            if tok == EOS {
                break;
            }
            state = s;
            input = tok;
        }
        DecodeResult { tokens, log_probs }
    }

    pub fn decode_greedy(&self, source: &[TokenId]) -> DecodeResult {
        // The RNG is never touched by greedy picks.
        self.decode(source, DecodeStrategy::Greedy, &mut seed::rng(0))
    }

    pub fn decode_stochastic_greedy(&self, source: &[TokenId], k: usize, seed: u64) -> DecodeResult {
        self.decode(source, DecodeStrategy::StochasticGreedy { k }, &mut seed::rng(seed))
    }

    pub fn decode_sample(&self, source: &[TokenId], seed: u64) -> DecodeResult {
        self.decode(source, DecodeStrategy::Sample, &mut seed::rng(seed))
    }

    /// Teacher-forced negative log-likelihood of `target` + end-of-sequence.
    /// Accumulates gradients of that loss into the parameters.
    pub fn loss_and_grad(&mut self, source: &[TokenId], target: &[TokenId]) -> f64 {
        let hd = self.config.hidden_dim;

        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut enc_caches = Vec::with_capacity(source.len());
        let mut states = Vec::with_capacity(source.len());
        for &t in source {
            let (h2, c2, cache) = self.encoder.forward(self.src_embed.lookup(t), &h, &c);
            states.push(h2.clone());
            enc_caches.push(cache);
            h = h2;
            c = c2;
        }

        let mut trace = Vec::with_capacity(target.len() + 1);
        let mut loss = 0.0;
        let mut input = BOS;
        for &tgt in target.iter().chain(std::iter::once(&EOS)) {
            let (h2, c2, cache) = self.decoder.forward(self.tgt_embed.lookup(input), &h, &c);
            let (ctx, weights) = self.attention.forward(&h2, &states);
            let mut cat = ctx;
            cat.extend_from_slice(&h2);
            let act: Vec<f64> = self.combine.forward(&cat).iter().map(|v| v.tanh()).collect();
            let log_probs = self.output.log_probs(&act);
            loss -= log_probs[tgt as usize];
            trace.push(StepTrace { input, target: tgt, cache, h: h2.clone(), weights, cat, act, log_probs });
            h = h2;
            c = c2;
            input = tgt;
        }

        let mut dkeys = vec![vec![0.0; hd]; states.len()];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for st in trace.iter().rev() {
            let dact = self.output.backward_nll(&st.act, &st.log_probs, st.target);
            let dpre: Vec<f64> = dact.iter().zip(&st.act).map(|(d, a)| d * (1.0 - a * a)).collect();
            let dcat = self.combine.backward(&st.cat, &dpre);
            let dq = self.attention.backward(&st.h, &states, &st.weights, &dcat[..hd], &mut dkeys);
            let dh: Vec<f64> = (0..hd).map(|k| dcat[hd + k] + dq[k] + dh_next[k]).collect();
            let (dx, dh_prev, dc_prev) = self.decoder.backward(&st.cache, &dh, &dc_next);
            self.tgt_embed.backward(st.input, &dx);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        for (t, cache) in enc_caches.iter().enumerate().rev() {
            for (a, b) in dh_next.iter_mut().zip(&dkeys[t]) {
                *a += b;
            }
            let (dx, dh_prev, dc_prev) = self.encoder.backward(cache, &dh_next, &dc_next);
            self.src_embed.backward(source[t], &dx);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        loss
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "config": self.config,
            "iteration": self.iteration,
            "vocab": &self.vocab.tokens()[RESERVED.len()..],
        });
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        ck.push(LayerRecord::new("src_embed", self.src_embed.spec(), self.src_embed.params()));
        ck.push(LayerRecord::new("tgt_embed", self.tgt_embed.spec(), self.tgt_embed.params()));
        ck.push(LayerRecord::new("encoder", self.encoder.spec(), self.encoder.params()));
        ck.push(LayerRecord::new("decoder", self.decoder.spec(), self.decoder.params()));
        ck.push(LayerRecord::new("attention", self.attention.spec(), vec![]));
        ck.push(LayerRecord::new("combine", self.combine.spec(), self.combine.params()));
        ck.push(LayerRecord::new("output", self.output.spec(), self.output.params()));
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: ModelConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let iteration = ck.meta["iteration"].as_u64().unwrap_or(0) as usize;
        let tokens: Vec<String> = serde_json::from_value(ck.meta["vocab"].clone())?;
        let vocab = Arc::new(Vocabulary::from_tokens(tokens));
        let mut m = Self::new(vocab, config, 0)?;
        m.iteration = iteration;
        restore(ck.take_layer("src_embed", LayerKind::Embedding)?, m.src_embed.params_mut())?;
        restore(ck.take_layer("tgt_embed", LayerKind::Embedding)?, m.tgt_embed.params_mut())?;
        restore(ck.take_layer("encoder", LayerKind::LstmCell)?, m.encoder.params_mut())?;
        restore(ck.take_layer("decoder", LayerKind::LstmCell)?, m.decoder.params_mut())?;
        ck.take_layer("attention", LayerKind::Attention)?;
        restore(ck.take_layer("combine", LayerKind::Linear)?, m.combine.params_mut())?;
        restore(ck.take_layer("output", LayerKind::SoftmaxProjection)?, m.output.params_mut())?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

impl Parameterized for GenerationModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.src_embed.params();
        v.extend(self.tgt_embed.params());
        v.extend(self.encoder.params());
        v.extend(self.decoder.params());
        v.extend(self.combine.params());
        v.extend(self.output.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.src_embed.params_mut();
        v.extend(self.tgt_embed.params_mut());
        v.extend(self.encoder.params_mut());
        v.extend(self.decoder.params_mut());
        v.extend(self.combine.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}

/// Anything that can answer a source utterance; implemented by trained
/// models and by scripted stand-ins in tests.
pub trait Responder {
    /// Response tokens without the end-of-sequence marker.
    fn respond(&self, source: &[TokenId], strategy: DecodeStrategy, rng: &mut seed::Rng) -> Vec<TokenId>;
}

impl Responder for GenerationModel {
    fn respond(&self, source: &[TokenId], strategy: DecodeStrategy, rng: &mut seed::Rng) -> Vec<TokenId> {
        self.decode(source, strategy, rng).response().to_vec()
    }
}
