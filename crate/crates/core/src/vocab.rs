//! Token vocabularies and the GloVe text-format reader.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::numerics::{ParamId, ParamStore};
use crate::scalar::Scalar;

pub const UNK: &str = "<unk>";

/// Index 0 is always the unknown-token row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(mut tokens: Vec<String>) -> Self {
        if tokens.first().map(String::as_str) != Some(UNK) {
            tokens.insert(0, UNK.to_string());
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from(Vec::new())
    }
}

impl Vocab {
    /// Keeps tokens seen at least `min_freq` times, in sorted order.
    pub fn from_counts(counts: &BTreeMap<String, usize>, min_freq: usize) -> Self {
        let tokens: Vec<String> = counts
            .iter()
            .filter(|(t, &c)| c >= min_freq && t.as_str() != UNK)
            .map(|(t, _)| t.clone())
            .collect();
        Self::from(tokens)
    }

    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts = BTreeMap::new();
        for t in tokens {
            *counts.entry(t.to_string()).or_insert(0) += 1;
        }
        Self::from_counts(&counts, min_freq)
    }

    /// Row for `token`, falling back to the unknown row.
    pub fn row(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, row: usize) -> Option<&str> {
        self.tokens.get(row).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GloveError {
    #[error("line {line}: expected {expected} components, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: {value:?} is not a number")]
    Number { line: usize, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pretrained vectors read from `token v1 … vd` lines.
#[derive(Debug, Clone, Default)]
pub struct Glove {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl Glove {
    /// Reads vectors, keeping only tokens accepted by `keep`. Every line must
    /// have exactly `dim` components.
    pub fn read<R: BufRead>(input: R, dim: usize, keep: impl Fn(&str) -> bool) -> Result<Self, GloveError> {
        let mut vectors = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let mut parts = line.split(' ');
            let Some(token) = parts.next().filter(|t| !t.is_empty()) else {
                continue;
            };
            let values: Vec<&str> = parts.collect();
            if values.len() != dim {
                return Err(GloveError::Dimension {
                    line: i + 1,
                    expected: dim,
                    found: values.len(),
                });
            }
            if !keep(token) {
                continue;
            }
            let v = values
                .iter()
                .map(|s| {
                    s.parse::<f32>().map_err(|_| GloveError::Number {
                        line: i + 1,
                        value: s.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            vectors.insert(token.to_string(), v);
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Overwrites the rows of `table` whose token has a pretrained vector;
    /// returns how many rows were set.
    pub fn fill_rows<T: Scalar>(&self, store: &mut ParamStore<T>, table: ParamId, vocab: &Vocab) -> usize {
        let t = store.get_mut(table);
        let dim = t.shape()[1];
        assert_eq!(dim, self.dim, "embedding width differs from vector file");
        let mut filled = 0;
        for (row, token) in vocab.tokens.iter().enumerate() {
            if let Some(v) = self.get(token) {
                for (dst, &src) in t.data_mut()[row * dim..(row + 1) * dim].iter_mut().zip(v) {
                    *dst = T::from_f64_lossy(f64::from(src));
                }
                filled += 1;
            }
        }
        filled
    }
}
