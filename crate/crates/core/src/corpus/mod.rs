//! Parallel (source, target) corpora, vocabularies and the synthetic generators.

mod synthetic;
mod vocab;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};

pub use synthetic::{gen_synthetic_dialogues, DialogueTemplates, SyntheticDialogues, SyntheticLabel, Topic};
pub use vocab::{TokenId, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use crate::error::{Error, Result};
use crate::seed;

pub type ExampleId = u64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: ExampleId,
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// Ordered examples sharing one vocabulary. Ids are unique and ascending.
#[derive(Clone, Debug)]
pub struct ParallelCorpus {
    examples: Vec<Example>,
    vocab: Arc<Vocabulary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusOptions {
    /// Corpus tokens kept in the vocabulary (reserved ids not counted).
    pub max_vocab: usize,
    pub min_count: usize,
    /// Longer utterances are truncated to this many tokens.
    pub max_len: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self { max_vocab: 50_000, min_count: 1, max_len: 50 }
    }
}

impl ParallelCorpus {
    pub fn new(vocab: Arc<Vocabulary>, examples: Vec<Example>) -> Result<Self> {
        for (k, ex) in examples.iter().enumerate() {
            if ex.source.is_empty() || ex.target.is_empty() {
                return Err(Error::Usage(format!("example {} has an empty side", ex.id)));
            }
            if k > 0 && examples[k - 1].id >= ex.id {
                return Err(Error::Usage(format!("example ids must be unique and ascending (at {})", ex.id)));
            }
            if let Some(bad) = ex.source.iter().chain(&ex.target).find(|&&t| !vocab.is_valid(t)) {
                return Err(Error::Usage(format!("example {} has token id {bad} outside the vocabulary", ex.id)));
            }
        }
        Ok(Self { examples, vocab })
    }

    pub fn empty(vocab: Arc<Vocabulary>) -> Self {
        Self { examples: Vec::new(), vocab }
    }

    /// Builds a corpus from text pairs, assigning ids `0..`.
    pub fn from_pairs<S: AsRef<str>>(vocab: Arc<Vocabulary>, pairs: &[(S, S)], max_len: usize) -> Result<Self> {
        let examples = pairs
            .iter()
            .enumerate()
            .map(|(i, (s, t))| Example {
                id: i as ExampleId,
                source: truncate(vocab.encode(s.as_ref()), max_len),
                target: truncate(vocab.encode(t.as_ref()), max_len),
            })
            .collect();
        Self::new(vocab, examples)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn get(&self, id: ExampleId) -> Option<&Example> {
        self.examples.binary_search_by_key(&id, |e| e.id).ok().map(|k| &self.examples[k])
    }

    pub fn ids(&self) -> Vec<ExampleId> {
        self.examples.iter().map(|e| e.id).collect()
    }

    /// The corpus with the given ids removed; order of the rest is preserved.
    pub fn without(&self, removed: &BTreeSet<ExampleId>) -> Self {
        Self {
            examples: self.examples.iter().filter(|e| !removed.contains(&e.id)).cloned().collect(),
            vocab: Arc::clone(&self.vocab),
        }
    }

    /// Examples whose ids are in `keep`, in corpus order.
    pub fn select(&self, keep: &BTreeSet<ExampleId>) -> Self {
        Self {
            examples: self.examples.iter().filter(|e| keep.contains(&e.id)).cloned().collect(),
            vocab: Arc::clone(&self.vocab),
        }
    }

    /// Deterministic split into `(rest, held)` where `held` has `n_held`
    /// examples chosen uniformly by `seed`. Both keep corpus order.
    pub fn split(&self, n_held: usize, seed: u64) -> (Self, Self) {
        let n_held = n_held.min(self.len());
        let mut rng = seed::rng(seed);
        let picked: BTreeSet<ExampleId> = rand::seq::index::sample(&mut rng, self.len(), n_held)
            .into_iter()
            .map(|k| self.examples[k].id)
            .collect();
        (self.without(&picked), self.select(&picked))
    }

    /// Tab-separated `id \t source \t target` lines in surface form.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&format!("{}\t{}\t{}\n", e.id, self.vocab.decode(&e.source), self.vocab.decode(&e.target)));
        }
        out
    }

    pub fn from_tsv(text: &str, vocab: Arc<Vocabulary>) -> Result<Self> {
        let mut examples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(id), Some(src), Some(tgt), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Format(format!("line {}: expected 3 tab-separated columns", n + 1)));
            };
            let id = id.parse().map_err(|_| Error::Format(format!("line {}: bad example id `{id}`", n + 1)))?;
            examples.push(Example { id, source: vocab.encode(src), target: vocab.encode(tgt) });
        }
        Self::new(vocab, examples)
    }
}

fn truncate(mut v: Vec<TokenId>, max_len: usize) -> Vec<TokenId> {
    v.truncate(max_len);
    v
}

/// Splits text into conversations (blank-line separated) and pairs each
/// utterance with the next one in the same conversation.
pub fn conversation_pairs(text: &str) -> Vec<(&str, &str)> {
    let mut pairs = Vec::new();
    let mut prev: Option<&str> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            pairs.push((p, line));
        }
        prev = Some(line);
    }
    pairs
}

/// Reads a one-utterance-per-line file and builds its vocabulary from every line.
pub fn load_corpus(path: &Path, options: CorpusOptions) -> Result<ParallelCorpus> {
    let text = fs::read_to_string(path)?;
    let vocab = Vocabulary::build(text.lines(), options.max_vocab, options.min_count);
    ParallelCorpus::from_pairs(Arc::new(vocab), &conversation_pairs(&text), options.max_len)
}

/// Like [`load_corpus`] but encodes against an existing vocabulary.
pub fn load_corpus_with_vocab(path: &Path, vocab: Arc<Vocabulary>, max_len: usize) -> Result<ParallelCorpus> {
    let text = fs::read_to_string(path)?;
    ParallelCorpus::from_pairs(vocab, &conversation_pairs(&text), max_len)
}

/// The multinomial fruit example: apple 0.3, orange 0.25, three berries at 0.15.
pub const FRUIT_DISTRIBUTION: [(&str, f64); 5] =
    [("apple", 0.3), ("orange", 0.25), ("blueberry", 0.15), ("blackberry", 0.15), ("raspberry", 0.15)];

/// Source token shared by every fruit-world example.
pub const FRUIT_PROMPT: &str = "fruit";

/// `n` examples with the constant source [`FRUIT_PROMPT`] and a single-token
/// target drawn from `choices`.
pub fn gen_fruit_world(choices: &[(&str, f64)], n: usize, seed: u64) -> Result<ParallelCorpus> {
    let total: f64 = choices.iter().map(|c| c.1).sum();
    if choices.is_empty() || (total - 1.0).abs() > 1e-9 || choices.iter().any(|c| !(c.1 >= 0.0)) {
        return Err(Error::Usage(format!("fruit probabilities must be nonnegative and sum to 1 (sum {total})")));
    }
    let vocab = Arc::new(Vocabulary::from_tokens(std::iter::once(FRUIT_PROMPT).chain(choices.iter().map(|c| c.0))));
    let dist = WeightedIndex::new(choices.iter().map(|c| c.1)).map_err(|e| Error::Usage(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let prompt = vocab.id(FRUIT_PROMPT);
    let examples = (0..n)
        .map(|i| Example { id: i as ExampleId, source: vec![prompt], target: vec![vocab.id(choices[dist.sample(&mut rng)].0)] })
        .collect();
    ParallelCorpus::new(vocab, examples)
}
