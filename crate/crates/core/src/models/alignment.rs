//! Alignment grounder: a command×element token dot-product matrix passed
//! through two 3×3 convolutions and 2×2 max pooling, joined with a tag
//! embedding into a 10-dimensional vector `h(c, e)` that a final linear
//! layer turns into a score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, neighbor_positions, subtree_text_tokens, text_attribute_tokens, ModelError, ModelKind, NeuralGrounder, Vocabularies};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::snapshot::PageSnapshot;
use crate::text::{tokenize_natural, Token};
use crate::vocab::Glove;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub token_dim: usize,
    pub command_len: usize,
    pub element_len: usize,
    pub conv_channels: usize,
    pub h_dim: usize,
    pub tag_embed_dim: usize,
    pub use_spatial_context: bool,
    pub ablate_text: bool,
    pub ablate_attributes: bool,
    pub freeze_token_embeddings: bool,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            token_dim: 50,
            command_len: 10,
            element_len: 10,
            conv_channels: 32,
            h_dim: 10,
            tag_embed_dim: 8,
            use_spatial_context: true,
            ablate_text: false,
            ablate_attributes: false,
            freeze_token_embeddings: false,
        }
    }
}

pub const TOKENS: &str = "alignment.tokens";
pub const CONV1_K: &str = "alignment.conv1.kernel";
pub const CONV1_B: &str = "alignment.conv1.bias";
pub const CONV2_K: &str = "alignment.conv2.kernel";
pub const CONV2_B: &str = "alignment.conv2.bias";
pub const TAGS: &str = "alignment.tags";
pub const H_W: &str = "alignment.h.w";
pub const H_B: &str = "alignment.h.b";
pub const OUT_W: &str = "alignment.out.w";
pub const OUT_B: &str = "alignment.out.b";

const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentModel {
    pub config: AlignmentConfig,
    pub vocabs: Vocabularies,
}

/// Shapes of every stage of one `h(c, e)` computation, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeLedger {
    pub stages: Vec<(&'static str, Vec<usize>)>,
}

impl ShapeLedger {
    pub fn shape(&self, stage: &str) -> Option<&[usize]> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, v)| v.as_slice())
    }
}

/// Element rows padded to `element_len`, plus the tag row; `None` is the
/// zero PAD row.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedElement {
    pub tokens: Vec<Option<usize>>,
    pub tag: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct AlignmentPageFeatures {
    candidates: Vec<usize>,
    elements: Vec<AlignedElement>,
    neighbors: Vec<[Option<usize>; 4]>,
}

struct Ids {
    tokens: ParamId,
    conv1_k: ParamId,
    conv1_b: ParamId,
    conv2_k: ParamId,
    conv2_b: ParamId,
    tags: ParamId,
    h_w: ParamId,
    h_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

fn pad(rows: impl Iterator<Item = usize>, len: usize) -> Vec<Option<usize>> {
    let mut out: Vec<Option<usize>> = rows.take(len).map(Some).collect();
    out.resize(len, None);
    out
}

impl AlignmentModel {
    pub fn new(config: AlignmentConfig, vocabs: Vocabularies) -> Self {
        assert!(
            config.command_len >= 6 && config.element_len >= 6,
            "two valid 3x3 convolutions and 2x2 pooling need at least 6 tokens per side"
        );
        Self { config, vocabs }
    }

    /// Side lengths of the pooled feature map.
    fn pooled(&self) -> (usize, usize) {
        let shrink = 2 * (KERNEL - 1);
        ((self.config.command_len - shrink) / 2, (self.config.element_len - shrink) / 2)
    }

    fn h_input_width(&self) -> usize {
        let (ph, pw) = self.pooled();
        self.config.conv_channels * ph * pw + self.config.tag_embed_dim
    }

    fn out_width(&self) -> usize {
        if self.config.use_spatial_context {
            5 * self.config.h_dim
        } else {
            self.config.h_dim
        }
    }

    /// Text tokens (element and descendants) followed by text-attribute
    /// tokens, truncated to `element_len`. Ablated segments are left out.
    pub fn element_text(&self, page: &PageSnapshot, index: usize) -> Vec<Token> {
        let mut out = Vec::new();
        if !self.config.ablate_text {
            out.extend(subtree_text_tokens(page, index));
        }
        if !self.config.ablate_attributes {
            out.extend(text_attribute_tokens(&page.elements[index]));
        }
        out.truncate(self.config.element_len);
        out
    }

    pub fn command_rows(&self, command: &str) -> Vec<Option<usize>> {
        let toks = tokenize_natural(command);
        pad(toks.iter().map(|t| self.vocabs.tokens.row(t.as_str())), self.config.command_len)
    }

    fn element_rows(&self, tokens: &[Token]) -> Vec<Option<usize>> {
        pad(tokens.iter().map(|t| self.vocabs.tokens.row(t.as_str())), self.config.element_len)
    }

    pub fn aligned_element(&self, page: &PageSnapshot, index: usize) -> AlignedElement {
        AlignedElement {
            tokens: self.element_rows(&self.element_text(page, index)),
            tag: Some(self.vocabs.tags.row(&page.elements[index].tag)),
        }
    }

    /// Stand-in for a missing neighbor: all PAD tokens and a zero tag row.
    pub fn empty_element(&self) -> AlignedElement {
        AlignedElement {
            tokens: vec![None; self.config.element_len],
            tag: None,
        }
    }

    fn ids<T: Scalar>(&self, store: &ParamStore<T>) -> Result<Ids, ModelError> {
        Ok(Ids {
            tokens: store.id(TOKENS)?,
            conv1_k: store.id(CONV1_K)?,
            conv1_b: store.id(CONV1_B)?,
            conv2_k: store.id(CONV2_K)?,
            conv2_b: store.id(CONV2_B)?,
            tags: store.id(TAGS)?,
            h_w: store.id(H_W)?,
            h_b: store.id(H_B)?,
            out_w: store.id(OUT_W)?,
            out_b: store.id(OUT_B)?,
        })
    }

    fn h_var<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &Ids,
        command: Var,
        element: &AlignedElement,
        mut ledger: Option<&mut ShapeLedger>,
    ) -> Result<Var, ModelError> {
        let mut record = |tape: &Tape<'_, T>, stage: &'static str, v: Var| {
            if let Some(l) = ledger.as_deref_mut() {
                l.stages.push((stage, tape.value(v).shape().to_vec()));
            }
        };
        let e = tape.lookup(ids.tokens, &element.tokens)?;
        let a = tape.matmul_nt(command, e)?;
        record(tape, "alignment", a);
        let (m, n) = (self.config.command_len, self.config.element_len);
        let x = tape.reshape(a, &[1, m, n])?;
        let (k1, b1) = (tape.param(ids.conv1_k), tape.param(ids.conv1_b));
        let c1 = tape.conv2d_valid(x, k1, b1)?;
        let c1 = tape.relu(c1);
        record(tape, "conv1", c1);
        let (k2, b2) = (tape.param(ids.conv2_k), tape.param(ids.conv2_b));
        let c2 = tape.conv2d_valid(c1, k2, b2)?;
        let c2 = tape.relu(c2);
        record(tape, "conv2", c2);
        let pooled = tape.maxpool2d(c2)?;
        record(tape, "pool", pooled);
        let tag = tape.lookup(ids.tags, &[element.tag])?;
        let joined = tape.concat(&[pooled, tag])?;
        record(tape, "joined", joined);
        let (w, b) = (tape.param(ids.h_w), tape.param(ids.h_b));
        let h = tape.linear(joined, w, b)?;
        record(tape, "h", h);
        Ok(h)
    }

    fn command_var<T: Scalar>(&self, tape: &mut Tape<'_, T>, ids: &Ids, command: &str) -> Result<Var, ModelError> {
        Ok(tape.lookup(ids.tokens, &self.command_rows(command))?)
    }

    /// `A(c, e)`: dot products of padded command and element token embeddings.
    pub fn alignment_matrix<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        command: &str,
        element_tokens: &[Token],
    ) -> Result<Tensor<T>, ModelError> {
        let ids = self.ids(store)?;
        let mut tape = Tape::new(store);
        let c = self.command_var(&mut tape, &ids, command)?;
        let e = tape.lookup(ids.tokens, &self.element_rows(element_tokens))?;
        let a = tape.matmul_nt(c, e)?;
        Ok(tape.value(a).clone())
    }

    /// `h(c, e)` for the element at pre-order `index`, with its stage shapes.
    pub fn h_vector<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        page: &PageSnapshot,
        command: &str,
        index: usize,
    ) -> Result<(Tensor<T>, ShapeLedger), ModelError> {
        let ids = self.ids(store)?;
        let mut tape = Tape::new(store);
        let c = self.command_var(&mut tape, &ids, command)?;
        let mut ledger = ShapeLedger { stages: Vec::new() };
        let h = self.h_var(&mut tape, &ids, c, &self.aligned_element(page, index), Some(&mut ledger))?;
        Ok((tape.value(h).clone(), ledger))
    }

    pub fn init_params_with<T: Scalar>(&self, seed: u64, glove: Option<&Glove>) -> ParamStore<T> {
        let mut store = self.init_params(seed);
        if let Some(g) = glove {
            let id = store.id(TOKENS).expect("token table");
            g.fill_rows(&mut store, id, &self.vocabs.tokens);
        }
        store
    }
}

impl NeuralGrounder for AlignmentModel {
    type PageFeatures = AlignmentPageFeatures;

    fn kind(&self) -> ModelKind {
        ModelKind::Alignment
    }

    fn page_features(&self, page: &PageSnapshot) -> AlignmentPageFeatures {
        let candidates = page.visible_indices();
        let elements = candidates.iter().map(|&i| self.aligned_element(page, i)).collect();
        let neighbors = if self.config.use_spatial_context {
            neighbor_positions(page, &candidates)
        } else {
            vec![[None; 4]; candidates.len()]
        };
        AlignmentPageFeatures {
            candidates,
            elements,
            neighbors,
        }
    }

    fn candidates<'f>(&self, features: &'f AlignmentPageFeatures) -> &'f [usize] {
        &features.candidates
    }

    fn logits<T: Scalar>(&self, tape: &mut Tape<'_, T>, features: &AlignmentPageFeatures, command: &str) -> Result<Var, ModelError> {
        if features.candidates.is_empty() {
            return Err(ModelError::NoCandidates(String::new()));
        }
        let ids = self.ids(tape.params())?;
        let c = self.command_var(tape, &ids, command)?;
        // h(c, n) for a neighbor n equals its own h as a candidate, since
        // neighbors are always visible candidates themselves.
        let mut hs = Vec::with_capacity(features.elements.len());
        for e in &features.elements {
            hs.push(self.h_var(tape, &ids, c, e, None)?);
        }
        let need_empty = self.config.use_spatial_context && features.neighbors.iter().flatten().any(Option::is_none);
        let empty = if need_empty {
            Some(self.h_var(tape, &ids, c, &self.empty_element(), None)?)
        } else {
            None
        };
        let mut scores = Vec::with_capacity(hs.len());
        for (k, &h) in hs.iter().enumerate() {
            let mut parts = vec![h];
            if self.config.use_spatial_context {
                for n in features.neighbors[k] {
                    parts.push(match n {
                        Some(j) => hs[j],
                        None => empty.expect("computed when some neighbor is missing"),
                    });
                }
            }
            let x = if parts.len() == 1 { h } else { tape.concat(&parts)? };
            let (w, b) = (tape.param(ids.out_w), tape.param(ids.out_b));
            scores.push(tape.linear(x, w, b)?);
        }
        Ok(tape.concat(&scores)?)
    }

    fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.config;
        let d = cfg.token_dim;
        let ch = cfg.conv_channels;
        let mut s = ParamStore::new();
        // Unit expected norm, so identical tokens stand out in A from the start.
        s.insert_uniform(TOKENS, &[self.vocabs.tokens.len(), d], (3.0 / d as f64).sqrt(), &mut rng)
            .expect("fresh store");
        s.insert_uniform(CONV1_K, &[ch, 1, KERNEL, KERNEL], glorot(KERNEL * KERNEL, ch), &mut rng)
            .expect("fresh store");
        // Biases are kept away from zero so PAD regions, where the conv input
        // is constant, do not sit on the ReLU kink.
        let bias = |rng: &mut ChaCha8Rng| -> Tensor<T> {
            Tensor::vector(
                (0..ch)
                    .map(|_| {
                        let mag: f64 = rng.gen_range(0.02..0.1);
                        T::from_f64_lossy(if rng.gen_bool(0.5) { mag } else { -mag })
                    })
                    .collect(),
            )
        };
        let b1 = bias(&mut rng);
        s.insert(CONV1_B, b1).expect("fresh store");
        s.insert_uniform(CONV2_K, &[ch, ch, KERNEL, KERNEL], glorot(ch * KERNEL * KERNEL, ch), &mut rng)
            .expect("fresh store");
        let b2 = bias(&mut rng);
        s.insert(CONV2_B, b2).expect("fresh store");
        s.insert_uniform(TAGS, &[self.vocabs.tags.len(), cfg.tag_embed_dim], 0.5, &mut rng)
            .expect("fresh store");
        let hin = self.h_input_width();
        s.insert_uniform(H_W, &[cfg.h_dim, hin], glorot(hin, cfg.h_dim), &mut rng)
            .expect("fresh store");
        s.insert(H_B, Tensor::zeros(&[cfg.h_dim])).expect("fresh store");
        let ow = self.out_width();
        s.insert_uniform(OUT_W, &[1, ow], glorot(ow, 1), &mut rng).expect("fresh store");
        s.insert(OUT_B, Tensor::zeros(&[1])).expect("fresh store");
        if cfg.freeze_token_embeddings {
            let id = s.id(TOKENS).expect("token table");
            s.freeze(id);
        }
        s
    }

    fn description(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("model description serializes")
    }
}
