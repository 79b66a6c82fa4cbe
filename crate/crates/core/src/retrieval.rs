//! TF-IDF retrieval over element token bags.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::prediction::{rank_with_ties, Prediction, RankedElement, TIE_EPSILON};
use crate::snapshot::PageSnapshot;
use crate::text::{element_token_bag, Token, TokenBag, Weight};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("document frequencies need at least one training page")]
    NoPages,
    #[error("page {0:?} has no visible elements")]
    NoCandidates(String),
    #[error("df table line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Attribute tokens count `1/alpha` each.
    pub alpha: Weight,
    /// Divide each element's score by the norm of its tf·idf vector.
    pub normalize_length: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            alpha: Weight::from_integer(3),
            normalize_length: false,
        }
    }
}

/// Page-level document frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DfTable {
    doc_count: u64,
    df: BTreeMap<String, u64>,
}

impl DfTable {
    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn df(&self, token: &str) -> u64 {
        self.df.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.df.len()
    }

    pub fn is_empty(&self) -> bool {
        self.df.is_empty()
    }

    /// Smoothed idf: `ln((N + 1) / (df + 1)) + 1`. Unseen tokens have df 0.
    pub fn idf(&self, token: &str) -> f64 {
        let n = self.doc_count as f64;
        ((n + 1.0) / (self.df(token) as f64 + 1.0)).ln() + 1.0
    }

    /// Header line `N=<doc_count>` then sorted `token\tdf` lines.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "N={}", self.doc_count)?;
        for (token, df) in &self.df {
            writeln!(out, "{token}\t{df}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, RetrievalError> {
        let bad = |line: usize, reason: &str| RetrievalError::Format {
            line,
            reason: reason.to_string(),
        };
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
        let doc_count: u64 = header
            .strip_prefix("N=")
            .and_then(|n| n.parse().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| bad(1, "expected N=<positive integer>"))?;
        let mut df = BTreeMap::new();
        let mut prev: Option<String> = None;
        for (i, line) in lines.enumerate() {
            let line = line?;
            let n = i + 2;
            let (token, count) = line.split_once('\t').ok_or_else(|| bad(n, "expected token<TAB>df"))?;
            let count: u64 = count.parse().map_err(|_| bad(n, "df is not an integer"))?;
            if Token::new(token).is_none() {
                return Err(bad(n, "invalid token"));
            }
            if count == 0 || count > doc_count {
                return Err(bad(n, "df outside [1, N]"));
            }
            if prev.as_deref().is_some_and(|p| p >= token) {
                return Err(bad(n, "tokens not strictly sorted"));
            }
            prev = Some(token.to_string());
            df.insert(token.to_string(), count);
        }
        Ok(Self { doc_count, df })
    }
}

/// Counts, for each stemmed token, the pages where some element's bag contains it.
pub fn build_df(training_pages: &[PageSnapshot], alpha: Weight) -> Result<DfTable, RetrievalError> {
    if training_pages.is_empty() {
        return Err(RetrievalError::NoPages);
    }
    let mut df: BTreeMap<String, u64> = BTreeMap::new();
    for page in training_pages {
        let mut seen = BTreeSet::new();
        for e in &page.elements {
            for t in element_token_bag(e, alpha).tokens() {
                seen.insert(t.as_str().to_string());
            }
        }
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    Ok(DfTable {
        doc_count: training_pages.len() as u64,
        df,
    })
}

fn ratio_to_f64(w: Weight) -> f64 {
    *w.numer() as f64 / *w.denom() as f64
}

/// `Σ_t tf_cmd(t) · tf_elem(t) · idf(t)²` over tokens in both bags.
pub fn tfidf_score(command_bag: &TokenBag, element_bag: &TokenBag, df: &DfTable) -> f64 {
    command_bag
        .iter()
        .filter_map(|(t, &wc)| element_bag.get(t).map(|we| (t, wc * we)))
        .map(|(t, tf)| {
            let idf = df.idf(t.as_str());
            ratio_to_f64(tf) * idf * idf
        })
        // Not `sum()`: an empty f64 sum is -0.0.
        .fold(0.0, |acc, x| acc + x)
}

fn element_norm(bag: &TokenBag, df: &DfTable) -> f64 {
    bag.iter()
        .map(|(t, &w)| {
            let v = ratio_to_f64(w) * df.idf(t.as_str());
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

pub const RETRIEVAL_MODEL: &str = "retrieval";

/// Ranks the visible elements of `page` by TF-IDF score; near-ties go to
/// the element earliest in pre-order.
pub fn ground_retrieval(
    page: &PageSnapshot,
    command: &str,
    df: &DfTable,
    config: &RetrievalConfig,
) -> Result<Prediction, RetrievalError> {
    let candidates = page.visible_indices();
    if candidates.is_empty() {
        return Err(RetrievalError::NoCandidates(page.page_id.clone()));
    }
    let query = TokenBag::from_command(command);
    let scored: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&i| {
            let bag = element_token_bag(&page.elements[i], config.alpha);
            let mut s = tfidf_score(&query, &bag, df);
            if config.normalize_length && s != 0.0 {
                s /= element_norm(&bag, df);
            }
            (i, s)
        })
        .collect();
    let ranked = rank_with_ties(&scored, TIE_EPSILON)
        .into_iter()
        .map(|k| {
            let (i, score) = scored[k];
            RankedElement {
                element_id: page.elements[i].id.clone(),
                preorder: i,
                score,
                probability: None,
            }
        })
        .collect();
    Ok(Prediction {
        model_name: RETRIEVAL_MODEL.to_string(),
        ranked,
    })
}
