//! Token choice rules over a single step's log-probabilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::ops;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DecodeStrategy {
    /// Argmax at every step (beam width 1); ties go to the lowest id.
    Greedy,
    /// Sample from the `k` most probable tokens, renormalized.
    StochasticGreedy { k: usize },
    /// Sample from the full distribution.
    Sample,
}

impl DecodeStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            DecodeStrategy::Greedy => "greedy",
            DecodeStrategy::StochasticGreedy { .. } => "stochastic greedy",
            DecodeStrategy::Sample => "pure sampling",
        }
    }
}

/// Default candidate count for stochastic greedy decoding.
pub const DEFAULT_TOP_K: usize = 5;

pub fn greedy_pick(log_probs: &[f64]) -> usize {
    ops::argmax(log_probs)
}

/// Indices of the `k` largest entries, by decreasing value, ties by lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let k = k.clamp(1, values.len());
    let cmp = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

fn draw<R: Rng>(candidates: &[usize], log_probs: &[f64], rng: &mut R) -> usize {
    let max = candidates.iter().map(|&i| log_probs[i]).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = candidates.iter().map(|&i| (log_probs[i] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = candidates[0];
    for (&i, &w) in candidates.iter().zip(&weights) {
        if w > 0.0 {
            if u < w {
                return i;
            }
            last = i;
        }
        u -= w;
    }
    last
}

/// Samples among the `k` most probable tokens with renormalized probabilities.
/// `k = 1` always returns [`greedy_pick`].
pub fn sample_top_k<R: Rng>(log_probs: &[f64], k: usize, rng: &mut R) -> usize {
    if k <= 1 {
        return greedy_pick(log_probs);
    }
    draw(&top_k_indices(log_probs, k), log_probs, rng)
}

pub fn sample_full<R: Rng>(log_probs: &[f64], rng: &mut R) -> usize {
    let all: Vec<usize> = (0..log_probs.len()).collect();
    draw(&all, log_probs, rng)
}

pub fn pick<R: Rng>(strategy: DecodeStrategy, log_probs: &[f64], rng: &mut R) -> usize {
    match strategy {
        DecodeStrategy::Greedy => greedy_pick(log_probs),
        DecodeStrategy::StochasticGreedy { k } => sample_top_k(log_probs, k, rng),
        DecodeStrategy::Sample => sample_full(log_probs, rng),
    }
}
