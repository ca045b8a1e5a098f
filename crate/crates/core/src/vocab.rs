//! Frequency-ranked vocabularies and the shuffled-vocabulary ablation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Token table where id = rank (0 is the most frequent token).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens already in rank order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = Vec::new();
        let mut ids = HashMap::new();
        for (i, tok) in tokens.into_iter().enumerate() {
            let tok = tok.into();
            if let Some(&first) = ids.get(&tok) {
                return Err(Error::DuplicateToken {
                    token: tok,
                    first_line: first + 1,
                    second_line: i + 1,
                });
            }
            ids.insert(tok.clone(), i);
            list.push(tok);
        }
        if list.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Ok(Vocabulary { tokens: list, ids })
    }

    /// Reads one token per line (UTF-8, LF). A trailing newline is allowed.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let body = text.strip_suffix('\n').unwrap_or(&text);
        if body.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Self::from_tokens(body.split('\n'))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Ranks tokens by descending count; ties go to the token seen first.
    pub fn build_from_corpus<S: AsRef<str>>(sentences: &[Vec<S>]) -> Result<Self> {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for tok in sentences.iter().flatten() {
            let entry = counts.entry(tok.as_ref()).or_insert_with(|| {
                order += 1;
                (0, order - 1)
            });
            entry.0 += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        Self::from_tokens(ranked.into_iter().map(|(t, _, _)| t.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<usize>> {
        tokens.iter().map(|t| self.id_of(t.as_ref())).collect()
    }

    pub fn shuffle_ids(&self, seed: u64) -> ShufflePermutation {
        ShufflePermutation::new(self.len(), seed)
    }
}

/// Seeded bijection on `[0, V)` used to erase frequency order.
///
/// Serializes as a bare JSON array of integers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShufflePermutation {
    perm: Vec<usize>,
}

impl ShufflePermutation {
    /// Fisher-Yates over the identity, driven by `Rng::new(seed)`.
    pub fn new(size: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..size).collect();
        Rng::new(seed).shuffle(&mut perm);
        ShufflePermutation { perm }
    }

    pub fn from_vec(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            if p >= perm.len() {
                return Err(Error::IdOutOfRange {
                    id: p,
                    bound: perm.len(),
                    index: Some(i),
                });
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidMapper(format!("permutation repeats {p} at index {i}")));
            }
        }
        Ok(ShufflePermutation { perm })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let perm: Vec<usize> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_vec(perm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.perm).expect("serializable");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn apply(&self, z: usize) -> usize {
        self.perm[z]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }
}
