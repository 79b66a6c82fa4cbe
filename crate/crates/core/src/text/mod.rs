//! Tokenization, stemming, stop words, and weighted token bags.

mod porter;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use num_rational::Ratio;
use num_traits::Zero;

use crate::snapshot::ElementRecord;

pub use porter::porter_stem;

/// Nonnegative exact weight.
pub type Weight = Ratio<u64>;

/// Lowercase word with no whitespace or punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    /// Returns `None` for strings that break the token invariants.
    pub fn new(s: &str) -> Option<Self> {
        let ok = !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() && !c.is_uppercase());
        ok.then(|| Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn push_lowercase(out: &mut Vec<Token>, piece: &str) {
    let lower: String = piece.chars().flat_map(char::to_lowercase).collect();
    if let Some(t) = Token::new(&lower) {
        out.push(t);
    }
}

/// Lowercases and splits on whitespace and punctuation. No stemming.
pub fn tokenize_natural(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for piece in text.split(|c: char| !c.is_alphanumeric()) {
        push_lowercase(&mut out, piece);
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum CharClass {
    Lower,
    Upper,
    Digit,
}

fn class_of(c: char) -> CharClass {
    if c.is_numeric() {
        CharClass::Digit
    } else if c.is_uppercase() {
        CharClass::Upper
    } else {
        CharClass::Lower
    }
}

/// Splits attribute values at punctuation, lower→upper camel-case
/// transitions, and letter/digit boundaries, then lowercases.
pub fn tokenize_attribute(value: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for piece in value.split(|c: char| !c.is_alphanumeric()) {
        let mut start = 0;
        let mut prev: Option<CharClass> = None;
        for (i, c) in piece.char_indices() {
            let cls = class_of(c);
            let boundary = match (prev, cls) {
                (Some(CharClass::Lower), CharClass::Upper) => true,
                (Some(CharClass::Digit), CharClass::Lower | CharClass::Upper) => true,
                (Some(CharClass::Lower | CharClass::Upper), CharClass::Digit) => true,
                _ => false,
            };
            if boundary {
                push_lowercase(&mut out, &piece[start..i]);
                start = i;
            }
            prev = Some(cls);
        }
        push_lowercase(&mut out, &piece[start..]);
    }
    out
}

/// Porter stem, iterated to its fixed point so that stemming is idempotent.
pub fn stem(t: &Token) -> Token {
    let mut cur = t.as_str().to_string();
    for _ in 0..16 {
        let next = porter_stem(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    Token(cur)
}

pub fn stem_all(tokens: &[Token]) -> Vec<Token> {
    tokens.iter().map(stem).collect()
}

/// Attributes whose tokens enter the retrieval bag.
pub const RETRIEVAL_ATTRIBUTES: &[&str] = &[
    "id",
    "class",
    "placeholder",
    "label",
    "tooltip",
    "aria-text",
    "aria",
    "name",
    "src",
    "href",
];

/// Attributes that usually hold natural language.
pub const TEXT_ATTRIBUTES: &[&str] = &[
    "aria",
    "aria-text",
    "title",
    "tooltip",
    "placeholder",
    "label",
    "name",
];

/// Weighted multiset of stemmed tokens. Zero weights are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenBag {
    weights: BTreeMap<Token, Weight>,
}

impl TokenBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, token: Token, w: Weight) {
        if w.is_zero() {
            return;
        }
        *self.weights.entry(token).or_insert_with(Weight::zero) += w;
    }

    pub fn weight(&self, token: &str) -> Weight {
        Token::new(token)
            .and_then(|t| self.weights.get(&t).copied())
            .unwrap_or_else(Weight::zero)
    }

    pub fn get(&self, token: &Token) -> Option<Weight> {
        self.weights.get(token).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Token, &Weight)> {
        self.weights.iter()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.weights.keys()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Bag of stemmed tokens, each counted with weight 1.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a Token>) -> Self {
        let mut bag = Self::new();
        for t in tokens {
            bag.add(stem(t), Weight::from_integer(1));
        }
        bag
    }

    /// Query bag for a command string.
    pub fn from_command(command: &str) -> Self {
        Self::from_tokens(&tokenize_natural(command))
    }
}

/// Retrieval representation of an element: stemmed tokens of its own text
/// with weight 1 each, plus stemmed attribute tokens with weight `1/alpha`.
pub fn element_token_bag(e: &ElementRecord, alpha: Weight) -> TokenBag {
    assert!(!alpha.is_zero(), "alpha must be positive");
    let mut bag = TokenBag::from_tokens(&tokenize_natural(&e.text));
    let attr_weight = alpha.recip();
    for key in RETRIEVAL_ATTRIBUTES {
        if let Some(value) = e.attr(key) {
            for t in tokenize_attribute(value) {
                bag.add(stem(&t), attr_weight);
            }
        }
    }
    bag
}

/// Fixed English stop-word list, one token per line.
#[derive(Debug, Clone)]
pub struct StopWords {
    words: HashSet<String>,
}

const SHIPPED_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

impl StopWords {
    pub fn parse(text: &str) -> Self {
        Self {
            words: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_lowercase)
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn shipped() -> &'static StopWords {
        static LIST: OnceLock<StopWords> = OnceLock::new();
        LIST.get_or_init(|| StopWords::parse(SHIPPED_STOPWORDS))
    }

    pub fn contains(&self, t: &Token) -> bool {
        self.words.contains(t.as_str())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Membership in the shipped stop-word list.
pub fn is_stopword(t: &Token) -> bool {
    StopWords::shipped().contains(t)
}
