//! Helpers shared by integration tests: random page generation and a naive
//! TF-IDF scorer used as an independent oracle.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ground_core::snapshot::{BBox, ElementRecord, PageSnapshot, Viewport};
use ground_core::text::{stem, tokenize_attribute, tokenize_natural};
use rand::seq::SliceRandom;
use rand::Rng;

pub const WORDS: &[&str] = &[
    "home", "news", "sports", "weather", "login", "search", "cart", "checkout", "help", "contact",
    "about", "careers", "privacy", "terms", "blog", "video", "music", "games", "mail", "maps",
    "photos", "shopping", "travel", "finance", "health", "tips", "stories", "submit", "share",
    "follow", "subscribe", "download", "settings", "profile", "account", "orders", "returns",
    "deals", "gifts", "books",
];

const ATTRS: &[&str] = &["id", "class", "placeholder", "tooltip", "aria", "name", "href", "title", "style"];

fn phrase<R: Rng>(rng: &mut R, max: usize) -> String {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn attr_value<R: Rng>(rng: &mut R) -> String {
    let a = WORDS.choose(rng).unwrap();
    let b = WORDS.choose(rng).unwrap();
    match rng.gen_range(0..3) {
        0 => format!("{a}-{b}"),
        1 => {
            let mut cs = b.chars();
            let first = cs.next().unwrap().to_ascii_uppercase();
            format!("{a}{first}{}", cs.as_str())
        }
        _ => format!("{a}_{}", rng.gen_range(0..20)),
    }
}

/// Random page whose element list is a valid pre-order of a random tree.
pub fn random_page<R: Rng>(rng: &mut R, page_id: &str, n: usize) -> PageSnapshot {
    let mut elements = Vec::with_capacity(n);
    let mut stack: Vec<String> = Vec::new();
    for i in 0..n {
        let id = format!("{page_id}-e{i}");
        if i > 0 {
            let keep = rng.gen_range(1..=stack.len());
            stack.truncate(keep);
        }
        let mut attributes = BTreeMap::new();
        for _ in 0..rng.gen_range(0..3) {
            attributes.insert(ATTRS.choose(rng).unwrap().to_string(), attr_value(rng));
        }
        elements.push(ElementRecord {
            id: id.clone(),
            parent_id: stack.last().cloned(),
            tag: ["div", "a", "span", "button", "input"].choose(rng).unwrap().to_string(),
            text: phrase(rng, 4),
            attributes,
            bbox: BBox::new(
                rng.gen_range(0.0..900.0),
                rng.gen_range(0.0..700.0),
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..60.0),
            ),
            visible: i == 0 || rng.gen_bool(0.8),
            is_leaf: false,
        });
        stack.push(id);
    }
    let root = elements[0].id.clone();
    PageSnapshot::from_parts(
        page_id.into(),
        format!("http://example.test/{page_id}"),
        Viewport { width: 1000.0, height: 800.0 },
        root,
        elements,
    )
    .expect("generated page is valid")
}

pub fn random_command<R: Rng>(rng: &mut R, tokens: usize) -> String {
    (0..tokens).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

const NAIVE_ATTRS: [&str; 10] = [
    "id", "class", "placeholder", "label", "tooltip", "aria-text", "aria", "name", "src", "href",
];

/// Element representation as a flat list of (stemmed token, weight) pairs,
/// recomputed from scratch without any bag type.
fn naive_terms(e: &ElementRecord, alpha: f64) -> Vec<(String, f64)> {
    let mut terms = Vec::new();
    for t in tokenize_natural(&e.text) {
        terms.push((stem(&t).into_string(), 1.0));
    }
    for key in NAIVE_ATTRS {
        if let Some(v) = e.attributes.get(key) {
            for t in tokenize_attribute(v) {
                terms.push((stem(&t).into_string(), 1.0 / alpha));
            }
        }
    }
    terms
}

pub struct NaiveIdf {
    pages: usize,
    page_tokens: Vec<BTreeSet<String>>,
}

impl NaiveIdf {
    pub fn new(pages: &[PageSnapshot]) -> Self {
        let page_tokens = pages
            .iter()
            .map(|p| {
                p.elements
                    .iter()
                    .flat_map(|e| naive_terms(e, 1.0))
                    .map(|(t, _)| t)
                    .collect()
            })
            .collect();
        Self { pages: pages.len(), page_tokens }
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.page_tokens.iter().filter(|s| s.contains(token)).count();
        ((self.pages as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
    }
}

/// Naive scores for every visible element, in pre-order, as (id, score).
pub fn naive_scores(page: &PageSnapshot, command: &str, idf: &NaiveIdf, alpha: f64) -> Vec<(String, f64)> {
    let query: Vec<String> = tokenize_natural(command).iter().map(|t| stem(t).into_string()).collect();
    page.elements
        .iter()
        .filter(|e| e.visible)
        .map(|e| {
            let terms = naive_terms(e, alpha);
            let mut score = 0.0;
            for (i, q) in query.iter().enumerate() {
                // Each distinct query token contributes once, with its count.
                if query[..i].contains(q) {
                    continue;
                }
                let tf_cmd = query.iter().filter(|x| *x == q).count() as f64;
                let tf_elem: f64 = terms.iter().filter(|(t, _)| t == q).map(|(_, w)| w).sum();
                let w = idf.idf(q);
                score += tf_cmd * tf_elem * w * w;
            }
            (e.id.clone(), score)
        })
        .collect()
}

/// Selection sort: repeatedly take the best remaining score; scores within
/// 1e-12 of each other count as equal and the earlier element wins.
pub fn naive_ranking(scores: &[(String, f64)]) -> Vec<String> {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let top = remaining.iter().map(|&i| scores[i].1).fold(f64::NEG_INFINITY, f64::max);
        let pos = remaining
            .iter()
            .position(|&i| top - scores[i].1 < 1e-12)
            .unwrap();
        out.push(scores[remaining.remove(pos)].0.clone());
    }
    out
}

pub fn leaf(id: &str, tag: &str, text: &str, attrs: &[(&str, &str)], bbox: [f64; 4]) -> ElementRecord {
    ElementRecord {
        id: id.into(),
        parent_id: Some("body".into()),
        tag: tag.into(),
        text: text.into(),
        attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        bbox: BBox::from(bbox),
        visible: true,
        is_leaf: true,
    }
}

pub fn body() -> ElementRecord {
    ElementRecord {
        id: "body".into(),
        parent_id: None,
        tag: "body".into(),
        text: String::new(),
        attributes: BTreeMap::new(),
        bbox: BBox::new(0.0, 0.0, 1000.0, 800.0),
        visible: false,
        is_leaf: false,
    }
}

pub fn assemble(page_id: &str, elements: Vec<ElementRecord>) -> PageSnapshot {
    PageSnapshot::from_parts(
        page_id.into(),
        format!("http://example.test/{page_id}"),
        Viewport { width: 1000.0, height: 800.0 },
        "body".into(),
        elements,
    )
    .expect("fixture page is valid")
}

/// The "Tip Us" anchor, centered at (0.53, 0.08) of a 1000×800 viewport.
pub fn news_page() -> PageSnapshot {
    assemble(
        "news",
        vec![
            body(),
            leaf("home", "a", "Home", &[("id", "home-link")], [400.0, 54.0, 60.0, 20.0]),
            leaf(
                "tip",
                "a",
                "Tip Us",
                &[("class", "dd-head"), ("id", "tip-link"), ("href", "submit_story/")],
                [500.0, 54.0, 60.0, 20.0],
            ),
            leaf("search", "input", "", &[("placeholder", "Search stories")], [600.0, 54.0, 120.0, 20.0]),
        ],
    )
}

/// Three visible candidates side by side: a label, an input, and a button.
pub fn three_candidate_page() -> PageSnapshot {
    assemble(
        "three",
        vec![
            body(),
            leaf("label", "span", "Email address", &[("class", "form-label")], [100.0, 100.0, 120.0, 24.0]),
            leaf("field", "input", "", &[("id", "email-input"), ("class", "form-input"), ("placeholder", "you@example")], [240.0, 100.0, 200.0, 24.0]),
            leaf("go", "button", "Sign up now", &[("title", "sign up"), ("class", "form-button")], [460.0, 100.0, 80.0, 24.0]),
        ],
    )
}
