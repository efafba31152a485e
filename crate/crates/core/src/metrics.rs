//! Perplexity aggregation, oracle perplexity, distinct-n and frequency tables.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, TokenId};
use crate::error::{Error, Result};
use crate::seq2seq::{perplexity, GenerationModel};

/// Unique n-grams over all responses divided by the total number of n-gram
/// occurrences. N-grams never span two responses.
pub fn distinct_n<S: AsRef<[TokenId]>>(responses: &[S], n: usize) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::Usage("distinct-n of an empty response set".into()));
    }
    if n == 0 {
        return Err(Error::Usage("n-gram order must be positive".into()));
    }
    let mut unique: HashSet<&[TokenId]> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        for gram in r.as_ref().windows(n) {
            unique.insert(gram);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { unique.len() as f64 / total as f64 })
}

/// Exact-match counts, most frequent first, ties by first occurrence.
pub fn response_frequency_table<T: Clone + Eq + Hash>(responses: &[T]) -> Vec<(T, usize)> {
    let mut counts: HashMap<&T, (usize, usize)> = HashMap::new();
    for (pos, r) in responses.iter().enumerate() {
        counts.entry(r).or_insert((0, pos)).0 += 1;
    }
    let mut table: Vec<(&T, usize, usize)> = counts.into_iter().map(|(r, (c, first))| (r, c, first)).collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    table.into_iter().map(|(r, c, _)| (r.clone(), c)).collect()
}

/// Teacher-forced log-probabilities of every example under every model:
/// `out[m][e]`.
pub fn logprob_matrix(models: &[&GenerationModel], corpus: &ParallelCorpus) -> Vec<Vec<f64>> {
    models
        .iter()
        .map(|m| corpus.iter().map(|e| m.target_logprob(&e.source, &e.target)).collect())
        .collect()
}

fn token_count(corpus: &ParallelCorpus) -> usize {
    corpus.iter().map(|e| e.target.len() + 1).sum()
}

/// Oracle perplexity for every prefix `Iter1..IterK`, `K = 1..=models.len()`.
///
/// For each example the best model's sequence log-probability is kept; the
/// sum is normalized by the total target tokens (end-of-sequence included).
/// Entry `K-1` can never exceed entry `K-2`.
pub fn oracle_perplexity_curve(models: &[&GenerationModel], corpus: &ParallelCorpus) -> Vec<f64> {
    let matrix = logprob_matrix(models, corpus);
    let tokens = token_count(corpus) as f64;
    let mut best = vec![f64::NEG_INFINITY; corpus.len()];
    matrix
        .iter()
        .map(|row| {
            for (b, &lp) in best.iter_mut().zip(row) {
                *b = b.max(lp);
            }
            (-best.iter().sum::<f64>() / tokens).exp()
        })
        .collect()
}

pub fn oracle_perplexity(models: &[&GenerationModel], corpus: &ParallelCorpus) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::Usage("oracle perplexity needs at least one model".into()));
    }
    Ok(*oracle_perplexity_curve(models, corpus).last().expect("non-empty"))
}

/// One row of the per-iteration table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub train_size: usize,
    pub dev_ppl: f64,
    pub oracle_ppl: f64,
    pub div1: f64,
    pub div2: f64,
}

/// Builds one row per model: dev perplexity, oracle perplexity through that
/// model, and distinct-1/2 of greedy dev decodes.
pub fn build_iteration_report(models: &[&GenerationModel], train_sizes: &[usize], dev: &ParallelCorpus) -> Result<Vec<IterationReport>> {
    if models.len() != train_sizes.len() {
        return Err(Error::Usage("one training-set size per model is required".into()));
    }
    if dev.is_empty() {
        return Err(Error::Usage("iteration report needs a non-empty dev corpus".into()));
    }
    let oracle = oracle_perplexity_curve(models, dev);
    models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let decodes: Vec<Vec<TokenId>> = dev.iter().map(|e| m.decode_greedy(&e.source).response().to_vec()).collect();
            Ok(IterationReport {
                iteration: k + 1,
                train_size: train_sizes[k],
                dev_ppl: perplexity(m, dev),
                oracle_ppl: oracle[k],
                div1: distinct_n(&decodes, 1)?,
                div2: distinct_n(&decodes, 2)?,
            })
        })
        .collect()
}

/// Aligned plain-text table: iter, data size, ppl, oracle-ppl, div-1, div-2.
pub fn format_iteration_table(rows: &[IterationReport]) -> String {
    let mut out = format!("{:>4}  {:>10}  {:>9}  {:>10}  {:>7}  {:>7}\n", "iter", "data size", "ppl", "oracle-ppl", "div-1", "div-2");
    for r in rows {
        out.push_str(&format!(
            "{:>4}  {:>10}  {:>9.3}  {:>10.3}  {:>6.2}%  {:>6.2}%\n",
            r.iteration,
            r.train_size,
            r.dev_ppl,
            r.oracle_ppl,
            100.0 * r.div1,
            100.0 * r.div2
        ));
    }
    out
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}
