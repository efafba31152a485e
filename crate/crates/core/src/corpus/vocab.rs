use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

const HEADER: &str = "#specdistill-vocab reserved=4 pad=0 bos=1 eos=2 unk=3";

/// Bijection between surface tokens and dense ids. Ids `0..4` are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from reserved tokens followed by `tokens` in order.
    /// Duplicates and reserved names in `tokens` are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for t in RESERVED {
            v.insert(t.to_string());
        }
        for t in tokens {
            v.insert(t.into());
        }
        v
    }

    fn insert(&mut self, tok: String) {
        if !self.index.contains_key(&tok) {
            self.index.insert(tok.clone(), self.tokens.len() as TokenId);
            self.tokens.push(tok);
        }
    }

    /// Keeps the `max_size` most frequent whitespace tokens that occur at
    /// least `min_count` times. `max_size` counts corpus tokens only; the
    /// four reserved ids come on top. Frequency ties go to the token seen first.
    pub fn build<'a, I>(lines: I, max_size: usize, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for line in lines {
            for tok in line.split_whitespace() {
                let e = counts.entry(tok).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                e.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts
            .into_iter()
            .filter(|(t, (c, _))| *c >= min_count && !RESERVED.contains(t))
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size);
        Self::from_tokens(ranked.into_iter().map(|(t, _, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id as usize).map(String::as_str).unwrap_or(RESERVED[UNK as usize])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_valid(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Space-joined surface form. A trailing end-of-sequence id is dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let ids = match ids.last() {
            Some(&EOS) => &ids[..ids.len() - 1],
            _ => ids,
        };
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Format("vocabulary file lacks the reserved-id header".into()));
        }
        let tokens: Vec<&str> = lines.collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Format("vocabulary file does not start with the reserved tokens".into()));
        }
        let v = Self::from_tokens(tokens[RESERVED.len()..].iter().copied());
        if v.len() != tokens.len() {
            return Err(Error::Format("vocabulary file contains duplicate tokens".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
