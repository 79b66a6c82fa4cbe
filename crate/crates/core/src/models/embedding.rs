//! Embedding grounder: averaged command embedding `f(c)`, projected element
//! embedding `g(e)`, and a linear score over their unit-normalized product,
//! optionally with the four spatial neighbors of the element.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{neighbor_positions, subtree_text_tokens, text_attribute_tokens, ModelError, ModelKind, NeuralGrounder, Vocabularies};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::snapshot::PageSnapshot;
use crate::text::{tokenize_attribute, tokenize_natural};
use crate::vocab::Glove;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub token_dim: usize,
    pub text_token_limit: usize,
    pub use_spatial_context: bool,
    pub ablate_text: bool,
    pub ablate_attributes: bool,
    /// Keep the token table at its initial values.
    pub freeze_token_embeddings: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            token_dim: 50,
            text_token_limit: 10,
            use_spatial_context: true,
            ablate_text: false,
            ablate_attributes: false,
            freeze_token_embeddings: false,
        }
    }
}

pub const TOKENS: &str = "embedding.tokens";
pub const TAGS: &str = "embedding.tags";
pub const IDS: &str = "embedding.ids";
pub const CLASSES: &str = "embedding.classes";
pub const PROJ_W: &str = "embedding.project.w";
pub const PROJ_B: &str = "embedding.project.b";
pub const SCORE_W: &str = "embedding.score.w";
pub const SCORE_B: &str = "embedding.score.b";

/// Bound of the uniform noise added to the structured initial projection
/// and score weights.
const PROJECTION_NOISE: f64 = 1e-3;

/// Width of the visual block: normalized center x, center y, visibility.
const VISUAL_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub config: EmbeddingConfig,
    pub vocabs: Vocabularies,
}

/// Command-independent inputs of one element, as vocabulary rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementInputs {
    pub text: Vec<usize>,
    pub text_attributes: Vec<usize>,
    pub tag: usize,
    pub ids: Vec<usize>,
    pub classes: Vec<usize>,
    pub visual: [f64; VISUAL_DIM],
}

#[derive(Debug, Clone)]
pub struct EmbeddingPageFeatures {
    candidates: Vec<usize>,
    elements: Vec<ElementInputs>,
    neighbors: Vec<[Option<usize>; 4]>,
}

impl EmbeddingPageFeatures {
    pub fn inputs(&self) -> &[ElementInputs] {
        &self.elements
    }
}

struct Ids {
    tokens: ParamId,
    tags: ParamId,
    ids: ParamId,
    classes: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    score_w: ParamId,
    score_b: ParamId,
}

impl EmbeddingModel {
    pub fn new(config: EmbeddingConfig, vocabs: Vocabularies) -> Self {
        Self { config, vocabs }
    }

    fn d(&self) -> usize {
        self.config.token_dim
    }

    /// Input width of the scoring layer.
    pub fn score_width(&self) -> usize {
        let base = 3 * self.d();
        if self.config.use_spatial_context {
            base + 4 * 2 * self.d()
        } else {
            base
        }
    }

    /// Token rows of a command; unknown tokens map to the unknown row.
    pub fn command_rows(&self, command: &str) -> Vec<usize> {
        tokenize_natural(command).iter().map(|t| self.vocabs.tokens.row(t.as_str())).collect()
    }

    pub fn element_inputs(&self, page: &PageSnapshot, index: usize) -> ElementInputs {
        let e = &page.elements[index];
        let v = &self.vocabs;
        let text = subtree_text_tokens(page, index)
            .iter()
            .take(self.config.text_token_limit)
            .map(|t| v.tokens.row(t.as_str()))
            .collect();
        let text_attributes = text_attribute_tokens(e).iter().map(|t| v.tokens.row(t.as_str())).collect();
        let family = |key: &str, vocab: &crate::vocab::Vocab| -> Vec<usize> {
            e.attr(key)
                .map(|val| tokenize_attribute(val).iter().map(|t| vocab.row(t.as_str())).collect())
                .unwrap_or_default()
        };
        let (cx, cy) = e.bbox.center();
        ElementInputs {
            text,
            text_attributes,
            tag: v.tags.row(&e.tag),
            ids: family("id", &v.ids),
            classes: family("class", &v.classes),
            visual: [
                cx / page.viewport.width,
                cy / page.viewport.height,
                if e.visible { 1.0 } else { 0.0 },
            ],
        }
    }

    fn ids<T: Scalar>(&self, store: &ParamStore<T>) -> Result<Ids, ModelError> {
        Ok(Ids {
            tokens: store.id(TOKENS)?,
            tags: store.id(TAGS)?,
            ids: store.id(IDS)?,
            classes: store.id(CLASSES)?,
            proj_w: store.id(PROJ_W)?,
            proj_b: store.id(PROJ_B)?,
            score_w: store.id(SCORE_W)?,
            score_b: store.id(SCORE_B)?,
        })
    }

    fn zeros<T: Scalar>(&self, tape: &mut Tape<'_, T>) -> Var {
        tape.constant(Tensor::zeros(&[self.d()]))
    }

    /// Mean of table rows; no rows gives the zero vector.
    fn mean_lookup<T: Scalar>(&self, tape: &mut Tape<'_, T>, table: ParamId, rows: &[usize]) -> Result<Var, ModelError> {
        if rows.is_empty() {
            return Ok(self.zeros(tape));
        }
        let rows: Vec<Option<usize>> = rows.iter().copied().map(Some).collect();
        let looked = tape.lookup(table, &rows)?;
        Ok(tape.mean_rows(looked)?)
    }

    fn command_var<T: Scalar>(&self, tape: &mut Tape<'_, T>, ids: &Ids, command: &str) -> Result<Var, ModelError> {
        self.mean_lookup(tape, ids.tokens, &self.command_rows(command))
    }

    fn element_var<T: Scalar>(&self, tape: &mut Tape<'_, T>, ids: &Ids, x: &ElementInputs) -> Result<Var, ModelError> {
        let text = if self.config.ablate_text {
            self.zeros(tape)
        } else {
            self.mean_lookup(tape, ids.tokens, &x.text)?
        };
        let (attrs, strings) = if self.config.ablate_attributes {
            (self.zeros(tape), self.zeros(tape))
        } else {
            let attrs = self.mean_lookup(tape, ids.tokens, &x.text_attributes)?;
            // Average over every tag/id/class row, each family in its own table.
            let total = 1 + x.ids.len() + x.classes.len();
            let mut acc = self.mean_lookup(tape, ids.tags, &[x.tag])?;
            acc = tape.scale(acc, T::one() / T::from_usize_lossy(total));
            for (table, rows) in [(ids.ids, &x.ids), (ids.classes, &x.classes)] {
                if rows.is_empty() {
                    continue;
                }
                let m = self.mean_lookup(tape, table, rows)?;
                let part = tape.scale(m, T::from_usize_lossy(rows.len()) / T::from_usize_lossy(total));
                acc = tape.add(acc, part)?;
            }
            (attrs, acc)
        };
        let visual = tape.constant(Tensor::vector(x.visual.iter().map(|&v| T::from_f64_lossy(v)).collect()));
        let blocks = tape.concat(&[text, attrs, strings, visual])?;
        let (w, b) = (tape.param(ids.proj_w), tape.param(ids.proj_b));
        Ok(tape.linear(blocks, w, b)?)
    }

    /// Scoring layer over already-normalized embeddings.
    fn score_var<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &Ids,
        f_hat: Var,
        g_hat: Var,
        neighbors: [Option<Var>; 4],
    ) -> Result<Var, ModelError> {
        let prod = tape.mul(f_hat, g_hat)?;
        let mut parts = vec![f_hat, g_hat, prod];
        if self.config.use_spatial_context {
            for n in neighbors {
                match n {
                    Some(n_hat) => {
                        let p = tape.mul(f_hat, n_hat)?;
                        parts.extend([n_hat, p]);
                    }
                    None => {
                        let z = self.zeros(tape);
                        parts.extend([z, z]);
                    }
                }
            }
        }
        let x = tape.concat(&parts)?;
        let (w, b) = (tape.param(ids.score_w), tape.param(ids.score_b));
        Ok(tape.linear(x, w, b)?)
    }

    /// `f(c)`: mean token embedding of the command.
    pub fn embed_command<T: Scalar>(&self, store: &ParamStore<T>, command: &str) -> Result<Tensor<T>, ModelError> {
        let ids = self.ids(store)?;
        let mut tape = Tape::new(store);
        let v = self.command_var(&mut tape, &ids, command)?;
        Ok(tape.value(v).clone())
    }

    /// `g(e)` before normalization.
    pub fn embed_element<T: Scalar>(&self, store: &ParamStore<T>, page: &PageSnapshot, index: usize) -> Result<Tensor<T>, ModelError> {
        let ids = self.ids(store)?;
        let mut tape = Tape::new(store);
        let v = self.element_var(&mut tape, &ids, &self.element_inputs(page, index))?;
        Ok(tape.value(v).clone())
    }

    /// `s(f(c), g(e))` from unnormalized embeddings; absent neighbors are `None`.
    pub fn score<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        fc: &Tensor<T>,
        ge: &Tensor<T>,
        neighbor_ges: [Option<&Tensor<T>>; 4],
    ) -> Result<T, ModelError> {
        let ids = self.ids(store)?;
        let mut tape = Tape::new(store);
        let unit = |tape: &mut Tape<'_, T>, t: &Tensor<T>| -> Result<Var, ModelError> {
            if t.shape() != [self.d()] {
                return Err(crate::numerics::NumericsError::ShapeMismatch {
                    op: "score",
                    left: t.shape().to_vec(),
                    right: vec![self.d()],
                }
                .into());
            }
            let v = tape.constant(t.clone());
            Ok(tape.unit_normalize(v)?)
        };
        let f_hat = unit(&mut tape, fc)?;
        let g_hat = unit(&mut tape, ge)?;
        let mut n = [None; 4];
        for (slot, t) in n.iter_mut().zip(neighbor_ges) {
            if let Some(t) = t {
                *slot = Some(unit(&mut tape, t)?);
            }
        }
        let s = self.score_var(&mut tape, &ids, f_hat, g_hat, n)?;
        Ok(tape.value(s).item())
    }

    /// Parameters initialized with pretrained vectors where available.
    pub fn init_params_with<T: Scalar>(&self, seed: u64, glove: Option<&Glove>) -> ParamStore<T> {
        let mut store = self.init_params(seed);
        if let Some(g) = glove {
            let id = store.id(TOKENS).expect("token table");
            g.fill_rows(&mut store, id, &self.vocabs.tokens);
        }
        store
    }
}

impl NeuralGrounder for EmbeddingModel {
    type PageFeatures = EmbeddingPageFeatures;

    fn kind(&self) -> ModelKind {
        ModelKind::Embedding
    }

    fn page_features(&self, page: &PageSnapshot) -> EmbeddingPageFeatures {
        let candidates = page.visible_indices();
        let elements = candidates.iter().map(|&i| self.element_inputs(page, i)).collect();
        let neighbors = if self.config.use_spatial_context {
            neighbor_positions(page, &candidates)
        } else {
            vec![[None; 4]; candidates.len()]
        };
        EmbeddingPageFeatures {
            candidates,
            elements,
            neighbors,
        }
    }

    fn candidates<'f>(&self, features: &'f EmbeddingPageFeatures) -> &'f [usize] {
        &features.candidates
    }

    fn logits<T: Scalar>(&self, tape: &mut Tape<'_, T>, features: &EmbeddingPageFeatures, command: &str) -> Result<Var, ModelError> {
        if features.candidates.is_empty() {
            return Err(ModelError::NoCandidates(String::new()));
        }
        let ids = self.ids(tape.params())?;
        let fc = self.command_var(tape, &ids, command)?;
        let f_hat = tape.unit_normalize(fc)?;
        let mut g_hats = Vec::with_capacity(features.elements.len());
        for x in &features.elements {
            let g = self.element_var(tape, &ids, x)?;
            g_hats.push(tape.unit_normalize(g)?);
        }
        let mut scores = Vec::with_capacity(g_hats.len());
        for (k, &g_hat) in g_hats.iter().enumerate() {
            let n = features.neighbors[k].map(|p| p.map(|j| g_hats[j]));
            scores.push(self.score_var(tape, &ids, f_hat, g_hat, n)?);
        }
        Ok(tape.concat(&scores)?)
    }

    fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.d();
        let emb = 0.5 / d as f64;
        let v = &self.vocabs;
        let proj_in = 3 * d + VISUAL_DIM;
        let mut s = ParamStore::new();
        let mut add = |name: &str, shape: &[usize], bound: f64| {
            s.insert_uniform(name, shape, bound, &mut rng).expect("fresh store");
        };
        add(TOKENS, &[v.tokens.len(), d], emb);
        add(TAGS, &[v.tags.len(), d], emb);
        add(IDS, &[v.ids.len(), d], emb);
        add(CLASSES, &[v.classes.len(), d], emb);
        add(PROJ_W, &[d, proj_in], PROJECTION_NOISE);
        add(PROJ_B, &[d], 0.0);
        add(SCORE_W, &[1, self.score_width()], PROJECTION_NOISE);
        add(SCORE_B, &[1], 0.0);
        // Each token block starts as the identity, so an untrained g(e)
        // already lives in the space of f(c) and the same word scores high.
        let proj = s.id(PROJ_W).expect("projection");
        let w = s.get_mut(proj).data_mut();
        for block in 0..3 {
            for r in 0..d {
                w[r * proj_in + block * d + r] += T::one();
            }
        }
        // Unit weights on the element's own block make the initial score the
        // cosine of f(c) and g(e); neighbor blocks start near zero.
        let score = s.id(SCORE_W).expect("score weights");
        for x in &mut s.get_mut(score).data_mut()[2 * d..3 * d] {
            *x += T::one();
        }
        if self.config.freeze_token_embeddings {
            let id = s.id(TOKENS).expect("token table");
            s.freeze(id);
        }
        s
    }

    fn description(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("model description serializes")
    }
}
