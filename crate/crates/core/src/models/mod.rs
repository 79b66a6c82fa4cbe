//! Neural grounders sharing one candidate-softmax training objective.

pub mod alignment;
pub mod embedding;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{
    grad_check_with, read_checkpoint, softmax, write_checkpoint, Gradients, NumericsError, ParamStore, Tape, Tensor, Var,
};
use crate::prediction::{rank_with_ties, Prediction, RankedElement, TIE_EPSILON};
use crate::scalar::Scalar;
use crate::snapshot::{ElementRecord, PageSnapshot};
use crate::text::{tokenize_attribute, tokenize_natural, Token, TEXT_ATTRIBUTES};
use crate::vocab::Vocab;

pub use alignment::{AlignmentConfig, AlignmentModel, ShapeLedger};
pub use embedding::{EmbeddingConfig, EmbeddingModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Retrieval,
    Embedding,
    Alignment,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Retrieval, ModelKind::Embedding, ModelKind::Alignment];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Retrieval => "retrieval",
            ModelKind::Embedding => "embedding",
            ModelKind::Alignment => "alignment",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model kind {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("page {0:?} has no visible elements")]
    NoCandidates(String),
    #[error("target {target_id:?} is not a visible element of page {page_id:?}")]
    TargetNotCandidate { page_id: String, target_id: String },
    #[error("bad model description: {0}")]
    Description(String),
}

/// Vocabularies built from training data; row 0 of each is the unknown row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub tokens: Vocab,
    pub tags: Vocab,
    pub ids: Vocab,
    pub classes: Vocab,
}

/// Minimum count for id and class tokens to get their own row.
pub const STRING_ATTRIBUTE_MIN_FREQ: usize = 2;

impl Vocabularies {
    /// Natural-language tokens from commands, element text, and text
    /// attributes; tags; and id/class tokens seen at least twice.
    pub fn build<'a>(pages: impl IntoIterator<Item = &'a PageSnapshot>, commands: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: BTreeMap<String, usize> = BTreeMap::new();
        let mut tags: BTreeMap<String, usize> = BTreeMap::new();
        let mut ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut classes: BTreeMap<String, usize> = BTreeMap::new();
        let bump = |m: &mut BTreeMap<String, usize>, t: Token| *m.entry(t.into_string()).or_insert(0) += 1;
        for c in commands {
            tokenize_natural(c).into_iter().for_each(|t| bump(&mut words, t));
        }
        for page in pages {
            for e in &page.elements {
                tokenize_natural(&e.text).into_iter().for_each(|t| bump(&mut words, t));
                text_attribute_tokens(e).into_iter().for_each(|t| bump(&mut words, t));
                *tags.entry(e.tag.clone()).or_insert(0) += 1;
                if let Some(v) = e.attr("id") {
                    tokenize_attribute(v).into_iter().for_each(|t| bump(&mut ids, t));
                }
                if let Some(v) = e.attr("class") {
                    tokenize_attribute(v).into_iter().for_each(|t| bump(&mut classes, t));
                }
            }
        }
        Self {
            tokens: Vocab::from_counts(&words, 1),
            tags: Vocab::from_counts(&tags, 1),
            ids: Vocab::from_counts(&ids, STRING_ATTRIBUTE_MIN_FREQ),
            classes: Vocab::from_counts(&classes, STRING_ATTRIBUTE_MIN_FREQ),
        }
    }
}

/// Text of an element and all its descendants, in pre-order, tokenized.
pub fn subtree_text_tokens(page: &PageSnapshot, index: usize) -> Vec<Token> {
    page.subtree_texts(index).flat_map(tokenize_natural).collect()
}

/// Tokens of the natural-language attributes, in a fixed attribute order.
/// `aria` and `aria-text` are the same attribute under two spellings, so
/// only the first present one is used.
pub fn text_attribute_tokens(e: &ElementRecord) -> Vec<Token> {
    let mut out = Vec::new();
    let mut seen_aria = false;
    for key in TEXT_ATTRIBUTES {
        let is_aria = *key == "aria" || *key == "aria-text";
        if is_aria && seen_aria {
            continue;
        }
        if let Some(v) = e.attr(key) {
            seen_aria |= is_aria;
            out.extend(tokenize_natural(v));
        }
    }
    out
}

/// A model that scores every visible element of a page against a command.
pub trait NeuralGrounder {
    type PageFeatures;

    fn kind(&self) -> ModelKind;

    /// Per-page inputs that do not depend on the command.
    fn page_features(&self, page: &PageSnapshot) -> Self::PageFeatures;

    /// Pre-order indices of the candidates, in logit order.
    fn candidates<'f>(&self, features: &'f Self::PageFeatures) -> &'f [usize];

    /// One logit per candidate.
    fn logits<T: Scalar>(&self, tape: &mut Tape<'_, T>, features: &Self::PageFeatures, command: &str) -> Result<Var, ModelError>;

    fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T>;

    /// Everything besides parameters needed to rebuild the model.
    fn description(&self) -> serde_json::Value;
}

/// Position of `target_id` among the candidates of a page.
pub fn target_position<M: NeuralGrounder>(
    model: &M,
    page: &PageSnapshot,
    features: &M::PageFeatures,
    target_id: &str,
) -> Result<usize, ModelError> {
    let not_candidate = || ModelError::TargetNotCandidate {
        page_id: page.page_id.clone(),
        target_id: target_id.to_string(),
    };
    let idx = page.index_of(target_id).ok_or_else(not_candidate)?;
    model.candidates(features).binary_search(&idx).map_err(|_| not_candidate())
}

/// `−log p(target | command)` and its gradient.
pub fn example_loss<M: NeuralGrounder, T: Scalar>(
    model: &M,
    store: &ParamStore<T>,
    features: &M::PageFeatures,
    command: &str,
    target: usize,
) -> Result<(T, Gradients<T>), ModelError> {
    let mut tape = Tape::new(store);
    let logits = model.logits(&mut tape, features, command)?;
    let loss = tape.nll_loss(logits, target)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(NumericsError::NonFiniteLoss(value.to_f64_lossy()).into());
    }
    Ok((value, tape.backward(loss)?))
}

/// `−log p(target | command)` alone.
pub fn loss_value<M: NeuralGrounder, T: Scalar>(
    model: &M,
    store: &ParamStore<T>,
    features: &M::PageFeatures,
    command: &str,
    target: usize,
) -> Result<T, ModelError> {
    let mut tape = Tape::new(store);
    let logits = model.logits(&mut tape, features, command)?;
    let loss = tape.nll_loss(logits, target)?;
    Ok(tape.value(loss).item())
}

/// Largest relative error between the analytic gradient of one example's
/// loss and central differences with step `h`.
pub fn model_grad_check<M: NeuralGrounder, T: Scalar>(
    model: &M,
    store: &ParamStore<T>,
    features: &M::PageFeatures,
    command: &str,
    target: usize,
    h: T,
    max_coords_per_param: Option<usize>,
) -> Result<T, ModelError> {
    let (_, analytic) = example_loss(model, store, features, command, target)?;
    grad_check_with(
        |s| loss_value(model, s, features, command, target),
        &analytic,
        store,
        h,
        max_coords_per_param,
    )
}

/// Candidate logits without recording gradients.
pub fn logits_value<M: NeuralGrounder, T: Scalar>(
    model: &M,
    store: &ParamStore<T>,
    features: &M::PageFeatures,
    command: &str,
) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new(store);
    let logits = model.logits(&mut tape, features, command)?;
    Ok(tape.value(logits).clone())
}

/// Softmax over candidates, ranked by probability; ties go to the earlier element.
pub fn predict<M: NeuralGrounder, T: Scalar>(
    model: &M,
    store: &ParamStore<T>,
    page: &PageSnapshot,
    features: &M::PageFeatures,
    command: &str,
) -> Result<Prediction, ModelError> {
    let candidates = model.candidates(features);
    if candidates.is_empty() {
        return Err(ModelError::NoCandidates(page.page_id.clone()));
    }
    let logits = logits_value(model, store, features, command)?;
    let probs = softmax(logits.data());
    let keyed: Vec<(usize, f64)> = candidates
        .iter()
        .zip(&probs)
        .map(|(&i, p)| (i, p.to_f64_lossy()))
        .collect();
    let ranked = rank_with_ties(&keyed, TIE_EPSILON)
        .into_iter()
        .map(|k| RankedElement {
            element_id: page.elements[candidates[k]].id.clone(),
            preorder: candidates[k],
            score: logits.data()[k].to_f64_lossy(),
            probability: Some(keyed[k].1),
        })
        .collect();
    Ok(Prediction {
        model_name: model.kind().to_string(),
        ranked,
    })
}

/// A neural model restored from a checkpoint.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Embedding(EmbeddingModel, ParamStore<f32>),
    Alignment(AlignmentModel, ParamStore<f32>),
}

impl LoadedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            LoadedModel::Embedding(..) => ModelKind::Embedding,
            LoadedModel::Alignment(..) => ModelKind::Alignment,
        }
    }

    pub fn predict(&self, page: &PageSnapshot, command: &str) -> Result<Prediction, ModelError> {
        match self {
            LoadedModel::Embedding(m, s) => predict(m, s, page, &m.page_features(page), command),
            LoadedModel::Alignment(m, s) => predict(m, s, page, &m.page_features(page), command),
        }
    }
}

pub fn save_model<M: NeuralGrounder, T: Scalar, W: Write>(
    out: W,
    model: &M,
    store: &ParamStore<T>,
    seed: u64,
) -> Result<(), NumericsError> {
    write_checkpoint(out, model.kind().as_str(), seed, model.description(), store)
}

pub fn load_model<R: Read>(input: R) -> Result<LoadedModel, ModelError> {
    let ckpt = read_checkpoint::<f32, _>(input)?;
    let desc = ckpt.header.model.clone();
    let bad = |e: serde_json::Error| ModelError::Description(e.to_string());
    match ckpt.header.kind.as_str() {
        "embedding" => Ok(LoadedModel::Embedding(serde_json::from_value(desc).map_err(bad)?, ckpt.params)),
        "alignment" => Ok(LoadedModel::Alignment(serde_json::from_value(desc).map_err(bad)?, ckpt.params)),
        other => Err(ModelError::Description(format!("unknown model kind {other:?}"))),
    }
}

/// Glorot-uniform bound for a `[fan_out, fan_in]` weight.
pub(crate) fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Maps pre-order neighbor indices to positions in the sorted candidate list.
pub(crate) fn neighbor_positions(page: &PageSnapshot, candidates: &[usize]) -> Vec<[Option<usize>; 4]> {
    page.neighbor_table(candidates)
        .into_iter()
        .map(|row| row.map(|n| n.and_then(|i| candidates.binary_search(&i).ok())))
        .collect()
}
