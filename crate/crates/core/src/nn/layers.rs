use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, sigmoid};
use super::param::{Param, Parameterized};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Embedding,
    Linear,
    LstmCell,
    Attention,
    SoftmaxProjection,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Embedding => 1,
            LayerKind::Linear => 2,
            LayerKind::LstmCell => 3,
            LayerKind::Attention => 4,
            LayerKind::SoftmaxProjection => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => LayerKind::Embedding,
            2 => LayerKind::Linear,
            3 => LayerKind::LstmCell,
            4 => LayerKind::Attention,
            5 => LayerKind::SoftmaxProjection,
            _ => return None,
        })
    }
}

/// Shape contract of a layer.
///
/// For embeddings `input_dim` is the vocabulary size; for an LSTM cell
/// `output_dim` is the hidden width; for attention both dims are the state
/// width of the query and the keys, which must agree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, input_dim: usize, output_dim: usize) -> Result<Self> {
        let spec = Self { kind, input_dim, output_dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!(
                "{:?} layer dims must be positive (got {}x{})",
                self.kind, self.input_dim, self.output_dim
            )));
        }
        if self.kind == LayerKind::Attention && self.input_dim != self.output_dim {
            return Err(Error::Config(format!(
                "attention needs matching state dims (query {}, keys {})",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Config(format!("{what}: expected length {want}, got {got}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub table: Param,
}

impl Embedding {
    pub fn new<R: Rng>(name: &str, vocab: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        Self { table: Param::uniform(format!("{name}.table"), &[vocab, dim], scale, rng) }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec { kind: LayerKind::Embedding, input_dim: self.table.shape()[0], output_dim: self.table.shape()[1] }
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn lookup(&self, id: u32) -> &[f64] {
        self.table.row(id as usize)
    }

    pub fn backward(&mut self, id: u32, d: &[f64]) {
        ops::add_assign(self.table.grad_row_mut(id as usize), d);
    }
}

impl Parameterized for Embedding {
    fn params(&self) -> Vec<&Param> {
        vec![&self.table]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.table]
    }
}

/// Affine map `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, input: usize, output: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[output, input], scale, rng),
            bias: Param::uniform(format!("{name}.bias"), &[output], scale, rng),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec { kind: LayerKind::Linear, input_dim: self.input_dim(), output_dim: self.output_dim() }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.value.clone();
        ops::matvec_acc(&self.weight.value, x, &mut y);
        y
    }

    pub fn try_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("linear input", x.len(), self.input_dim())?;
        Ok(self.forward(x))
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        ops::outer_acc(&mut self.weight.grad, dy, x);
        ops::add_assign(&mut self.bias.grad, dy);
        let mut dx = vec![0.0; x.len()];
        ops::matvec_t_acc(&self.weight.value, dy, &mut dx);
        dx
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Standard LSTM cell. Gate blocks in the stacked weights are ordered
/// input, forget, candidate, output:
///
/// ```text
/// i = σ(Wi x + Ui h + bi)    f = σ(Wf x + Uf h + bf)
/// g = tanh(Wg x + Ug h + bg) o = σ(Wo x + Uo h + bo)
/// c' = f ⊙ c + i ⊙ g         h' = o ⊙ tanh(c')
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_input: Param,
    pub w_hidden: Param,
    pub bias: Param,
}

/// Activations saved by [`LstmCell::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w_input: Param::uniform(format!("{name}.w_input"), &[4 * hidden, input], scale, rng),
            w_hidden: Param::uniform(format!("{name}.w_hidden"), &[4 * hidden, hidden], scale, rng),
            bias: Param::uniform(format!("{name}.bias"), &[4 * hidden], scale, rng),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec { kind: LayerKind::LstmCell, input_dim: self.input_dim(), output_dim: self.hidden_dim() }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    fn gates(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hd = self.hidden_dim();
        let mut z = self.bias.value.clone();
        ops::matvec_acc(&self.w_input.value, x, &mut z);
        ops::matvec_acc(&self.w_hidden.value, h, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        z
    }

    fn combine(&self, gates: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let (i, rest) = gates.split_at(hd);
        let (f, rest) = rest.split_at(hd);
        let (g, o) = rest.split_at(hd);
        let c_next: Vec<f64> = (0..hd).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c_next.iter().map(|v| v.tanh()).collect();
        let h_next = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        (h_next, c_next, tanh_c)
    }

    /// Inference step without caching: returns `(h', c')`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let gates = self.gates(x, h);
        let (h_next, c_next, _) = self.combine(&gates, c);
        (h_next, c_next)
    }

    /// Dimension-checked variant of [`step`](Self::step).
    pub fn try_step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("lstm input", x.len(), self.input_dim())?;
        check_len("lstm hidden", h.len(), self.hidden_dim())?;
        check_len("lstm cell", c.len(), self.hidden_dim())?;
        Ok(self.step(x, h, c))
    }

    /// Training step: returns `(h', c')` and the cache for [`backward`](Self::backward).
    pub fn forward(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, LstmCache) {
        let gates = self.gates(x, h);
        let (h_next, c_next, tanh_c) = self.combine(&gates, c);
        let cache = LstmCache { x: x.to_vec(), h_prev: h.to_vec(), c_prev: c.to_vec(), gates, tanh_c };
        (h_next, c_next, cache)
    }

    /// Given `dL/dh'` and `dL/dc'`, accumulates parameter gradients and
    /// returns `(dL/dx, dL/dh, dL/dc)`.
    pub fn backward(&mut self, cache: &LstmCache, dh: &[f64], dc: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let g = &cache.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, cand, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let dc_total = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dc_total * cand * i * (1.0 - i);
            dz[hd + k] = dc_total * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * hd + k] = dc_total * i * (1.0 - cand * cand);
            dz[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dc_total * f;
        }
        ops::outer_acc(&mut self.w_input.grad, &dz, &cache.x);
        ops::outer_acc(&mut self.w_hidden.grad, &dz, &cache.h_prev);
        ops::add_assign(&mut self.bias.grad, &dz);
        let mut dx = vec![0.0; cache.x.len()];
        ops::matvec_t_acc(&self.w_input.value, &dz, &mut dx);
        let mut dh_prev = vec![0.0; hd];
        ops::matvec_t_acc(&self.w_hidden.value, &dz, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

impl Parameterized for LstmCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

/// Parameter-free dot-product attention: scores `s_t = q · k_t`, weights
/// `softmax(s)`, context `Σ α_t k_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    pub dim: usize,
}

impl Attention {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec { kind: LayerKind::Attention, input_dim: self.dim, output_dim: self.dim }
    }

    /// Returns `(context, weights)`.
    pub fn forward(&self, query: &[f64], keys: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let scores: Vec<f64> = keys.iter().map(|k| ops::dot(query, k)).collect();
        let weights = ops::softmax(&scores);
        let mut context = vec![0.0; query.len()];
        for (w, k) in weights.iter().zip(keys) {
            for (c, v) in context.iter_mut().zip(k) {
                *c += w * v;
            }
        }
        (context, weights)
    }

    pub fn try_forward(&self, query: &[f64], keys: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        if keys.is_empty() {
            return Err(Error::Usage("attention over an empty encoder sequence".into()));
        }
        check_len("attention query", query.len(), self.dim)?;
        for k in keys {
            check_len("attention key", k.len(), self.dim)?;
        }
        Ok(self.forward(query, keys))
    }

    /// Returns `dL/dquery` and adds `dL/dkeys` into `dkeys`.
    pub fn backward(&self, query: &[f64], keys: &[Vec<f64>], weights: &[f64], dcontext: &[f64], dkeys: &mut [Vec<f64>]) -> Vec<f64> {
        let dalpha: Vec<f64> = keys.iter().map(|k| ops::dot(dcontext, k)).collect();
        let mean = ops::dot(weights, &dalpha);
        let mut dquery = vec![0.0; query.len()];
        for (t, k) in keys.iter().enumerate() {
            let ds = weights[t] * (dalpha[t] - mean);
            let dk = &mut dkeys[t];
            for j in 0..k.len() {
                dk[j] += weights[t] * dcontext[j] + ds * query[j];
                dquery[j] += ds * k[j];
            }
        }
        dquery
    }
}

/// Linear map to vocabulary logits followed by log-softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxProjection {
    pub proj: Linear,
}

impl SoftmaxProjection {
    pub fn new<R: Rng>(name: &str, input: usize, vocab: usize, scale: f64, rng: &mut R) -> Self {
        Self { proj: Linear::new(name, input, vocab, scale, rng) }
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec { kind: LayerKind::SoftmaxProjection, ..self.proj.spec() }
    }

    pub fn vocab_size(&self) -> usize {
        self.proj.output_dim()
    }

    pub fn log_probs(&self, x: &[f64]) -> Vec<f64> {
        ops::log_softmax(&self.proj.forward(x))
    }

    /// Backward of `-log p[target]` given the forward's log-probabilities.
    pub fn backward_nll(&mut self, x: &[f64], log_probs: &[f64], target: u32) -> Vec<f64> {
        let mut dlogits: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        dlogits[target as usize] -= 1.0;
        self.proj.backward(x, &dlogits)
    }
}

impl Parameterized for SoftmaxProjection {
    fn params(&self) -> Vec<&Param> {
        self.proj.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.proj.params_mut()
    }
}
