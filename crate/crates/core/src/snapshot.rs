//! Web-page snapshots: element records, DOM tree validation, pre-order
//! traversal, and geometric neighbors.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::Example;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate element id {id:?} at {path}")]
    DuplicateId { id: String, path: String },
    #[error("root element {0:?} not found")]
    MissingRoot(String),
    #[error("root element {id:?} at {path} must come first and have no parent")]
    BadRoot { id: String, path: String },
    #[error("element {id:?} at {path} references missing parent {parent:?}")]
    OrphanParent {
        id: String,
        path: String,
        parent: Option<String>,
    },
    #[error("cycle in parent links through element {id:?} at {path}")]
    Cycle { id: String, path: String },
    #[error("elements are not in pre-order: {id:?} at {path} does not follow its parent")]
    NotPreorder { id: String, path: String },
    #[error("invalid element {id:?} at {path}: {reason}")]
    InvalidElement {
        id: String,
        path: String,
        reason: String,
    },
    #[error("invalid viewport {width}x{height}")]
    InvalidViewport { width: f64, height: f64 },
    #[error("unknown element id {0:?}")]
    UnknownElement(String),
    #[error("element {0:?} is not visible")]
    InvisibleElement(String),
}

/// Bounding box in render pixels, serialized as `[left, top, width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([left, top, width, height]: [f64; 4]) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.left, b.top, b.width, b.height]
    }
}

impl BBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub id: String,
    pub parent_id: Option<String>,
    pub tag: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub bbox: BBox,
    pub visible: bool,
    pub is_leaf: bool,
}

impl ElementRecord {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Top,
    Bottom,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Top,
        Direction::Bottom,
        Direction::Left,
        Direction::Right,
    ];
}

#[derive(Debug, Clone, Deserialize)]
struct RawSnapshot {
    page_id: String,
    url: String,
    viewport: Viewport,
    root_id: String,
    elements: Vec<ElementRecord>,
}

/// One archived page. Immutable after [`load_snapshot`] / [`PageSnapshot::from_parts`].
#[derive(Debug, Clone, Serialize)]
pub struct PageSnapshot {
    pub page_id: String,
    pub url: String,
    pub viewport: Viewport,
    pub root_id: String,
    pub elements: Vec<ElementRecord>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    #[serde(skip)]
    subtree_end: Vec<usize>,
}

impl PartialEq for PageSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.page_id == other.page_id
            && self.url == other.url
            && self.viewport == other.viewport
            && self.root_id == other.root_id
            && self.elements == other.elements
    }
}

pub fn load_snapshot(bytes: &[u8]) -> Result<PageSnapshot, SnapshotError> {
    let raw: RawSnapshot = serde_json::from_slice(bytes)?;
    PageSnapshot::from_parts(raw.page_id, raw.url, raw.viewport, raw.root_id, raw.elements)
}

fn path(i: usize) -> String {
    format!("elements[{i}]")
}

impl PageSnapshot {
    /// Validates the parts and builds the snapshot. Tags are lowercased.
    pub fn from_parts(
        page_id: String,
        url: String,
        viewport: Viewport,
        root_id: String,
        mut elements: Vec<ElementRecord>,
    ) -> Result<Self, SnapshotError> {
        if !(viewport.width > 0.0 && viewport.height > 0.0) {
            return Err(SnapshotError::InvalidViewport {
                width: viewport.width,
                height: viewport.height,
            });
        }

        let mut index = HashMap::with_capacity(elements.len());
        for (i, e) in elements.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(SnapshotError::DuplicateId {
                    id: e.id.clone(),
                    path: path(i),
                });
            }
        }

        let root = *index
            .get(&root_id)
            .ok_or_else(|| SnapshotError::MissingRoot(root_id.clone()))?;
        if root != 0 || elements[root].parent_id.is_some() {
            return Err(SnapshotError::BadRoot {
                id: root_id,
                path: path(root),
            });
        }

        let mut parent = vec![usize::MAX; elements.len()];
        for (i, e) in elements.iter().enumerate().skip(1) {
            match e.parent_id.as_ref().and_then(|p| index.get(p)) {
                Some(&p) => parent[i] = p,
                None => {
                    return Err(SnapshotError::OrphanParent {
                        id: e.id.clone(),
                        path: path(i),
                        parent: e.parent_id.clone(),
                    })
                }
            }
        }

        // Every chain of parent links must reach the root.
        let mut reaches_root = vec![false; elements.len()];
        reaches_root[0] = true;
        for start in 1..elements.len() {
            let mut chain = Vec::new();
            let mut cur = start;
            while !reaches_root[cur] {
                if chain.len() > elements.len() {
                    return Err(SnapshotError::Cycle {
                        id: elements[start].id.clone(),
                        path: path(start),
                    });
                }
                chain.push(cur);
                cur = parent[cur];
            }
            for c in chain {
                reaches_root[c] = true;
            }
        }

        // Pre-order: each element's parent must be on the open ancestor stack.
        let mut subtree_end = vec![elements.len(); elements.len()];
        let mut stack = vec![0usize];
        for i in 1..elements.len() {
            while let Some(&top) = stack.last() {
                if top == parent[i] {
                    break;
                }
                subtree_end[top] = i;
                stack.pop();
            }
            if stack.is_empty() {
                return Err(SnapshotError::NotPreorder {
                    id: elements[i].id.clone(),
                    path: path(i),
                });
            }
            stack.push(i);
        }

        for (i, e) in elements.iter_mut().enumerate() {
            let b = e.bbox;
            let reason = if e.tag.is_empty() {
                Some("empty tag")
            } else if !(b.width >= 0.0 && b.height >= 0.0) {
                Some("negative or non-finite box size")
            } else if !(b.left.is_finite() && b.top.is_finite() && b.width.is_finite() && b.height.is_finite()) {
                Some("non-finite box")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(SnapshotError::InvalidElement {
                    id: e.id.clone(),
                    path: path(i),
                    reason: reason.to_string(),
                });
            }
            e.tag = e.tag.to_lowercase();
        }

        Ok(Self {
            page_id,
            url,
            viewport,
            root_id,
            elements,
            index,
            subtree_end,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn element(&self, id: &str) -> Option<&ElementRecord> {
        self.index_of(id).map(|i| &self.elements[i])
    }

    /// Position of `id` in the pre-order traversal; the root is 0.
    pub fn preorder_index(&self, id: &str) -> Result<usize, SnapshotError> {
        self.index_of(id)
            .ok_or_else(|| SnapshotError::UnknownElement(id.to_string()))
    }

    /// Indices of visible elements, in pre-order. This is the candidate set.
    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.elements.len())
            .filter(|&i| self.elements[i].visible)
            .collect()
    }

    pub fn visible_candidates(&self) -> Vec<&str> {
        self.elements
            .iter()
            .filter(|e| e.visible)
            .map(|e| e.id.as_str())
            .collect()
    }

    /// Pre-order index range `[i, end)` of the subtree rooted at element `i`.
    pub fn subtree_range(&self, i: usize) -> std::ops::Range<usize> {
        i..self.subtree_end[i]
    }

    /// Texts of element `i` and its descendants, in pre-order.
    pub fn subtree_texts(&self, i: usize) -> impl Iterator<Item = &str> {
        self.elements[self.subtree_range(i)]
            .iter()
            .map(|e| e.text.as_str())
            .filter(|t| !t.is_empty())
    }

    pub fn neighbor(&self, id: &str, d: Direction) -> Result<Option<&str>, SnapshotError> {
        let i = self.preorder_index(id)?;
        if !self.elements[i].visible {
            return Err(SnapshotError::InvisibleElement(id.to_string()));
        }
        Ok(self.neighbor_index(i, d).map(|n| self.elements[n].id.as_str()))
    }

    /// Nearest visible element adjacent to element `i` in direction `d`.
    ///
    /// A candidate must extend past `i`'s facing edge without reaching its far
    /// edge, and overlap it on the perpendicular axis. Smallest gap wins (negative
    /// gaps count as 0), then larger overlap, then earlier pre-order.
    pub fn neighbor_index(&self, i: usize, d: Direction) -> Option<usize> {
        let e = &self.elements[i].bbox;
        let mut best: Option<(f64, f64, usize)> = None;
        for (j, other) in self.elements.iter().enumerate() {
            if j == i || !other.visible {
                continue;
            }
            let Some((gap, overlap)) = adjacency(e, &other.bbox, d) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bg, bo, _)) => gap < bg || (gap == bg && overlap > bo),
            };
            if better {
                best = Some((gap, overlap, j));
            }
        }
        best.map(|(_, _, j)| j)
    }

    /// Neighbors of every element in `indices`, in `Direction::ALL` order.
    pub fn neighbor_table(&self, indices: &[usize]) -> Vec<[Option<usize>; 4]> {
        indices
            .iter()
            .map(|&i| Direction::ALL.map(|d| self.neighbor_index(i, d)))
            .collect()
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    a1.min(b1) - a0.max(b0)
}

/// `(gap, perpendicular overlap)` if `n` lies on side `d` of `e`.
fn adjacency(e: &BBox, n: &BBox, d: Direction) -> Option<(f64, f64)> {
    let (on_side, gap, ov) = match d {
        Direction::Top => (
            n.top < e.top && n.bottom() < e.bottom(),
            e.top - n.bottom(),
            overlap(e.left, e.right(), n.left, n.right()),
        ),
        Direction::Bottom => (
            n.bottom() > e.bottom() && n.top > e.top,
            n.top - e.bottom(),
            overlap(e.left, e.right(), n.left, n.right()),
        ),
        Direction::Left => (
            n.left < e.left && n.right() < e.right(),
            e.left - n.right(),
            overlap(e.top, e.bottom(), n.top, n.bottom()),
        ),
        Direction::Right => (
            n.right() > e.right() && n.left > e.left,
            n.left - e.right(),
            overlap(e.top, e.bottom(), n.top, n.bottom()),
        ),
    };
    (on_side && ov > 0.0).then_some((gap.max(0.0), ov))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusIssueKind {
    MissingPage,
    MissingTarget,
    InvisibleTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusIssue {
    pub example: usize,
    pub page_id: String,
    pub target_id: String,
    pub kind: CorpusIssueKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusReport {
    pub issues: Vec<CorpusIssue>,
    pub missing_page: usize,
    pub missing_target: usize,
    pub invisible_target: usize,
}

impl CorpusReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_issue(&self, example: usize) -> bool {
        self.issues.iter().any(|i| i.example == example)
    }
}

/// Reports examples whose page or target element is missing or invisible.
pub fn validate_corpus(pages: &[PageSnapshot], examples: &[Example]) -> CorpusReport {
    let by_id: HashMap<&str, &PageSnapshot> =
        pages.iter().map(|p| (p.page_id.as_str(), p)).collect();
    let mut report = CorpusReport::default();
    for (n, ex) in examples.iter().enumerate() {
        let kind = match by_id.get(ex.page_id.as_str()) {
            None => Some(CorpusIssueKind::MissingPage),
            Some(page) => match page.element(&ex.target_id) {
                None => Some(CorpusIssueKind::MissingTarget),
                Some(e) if !e.visible => Some(CorpusIssueKind::InvisibleTarget),
                Some(_) => None,
            },
        };
        if let Some(kind) = kind {
            match kind {
                CorpusIssueKind::MissingPage => report.missing_page += 1,
                CorpusIssueKind::MissingTarget => report.missing_target += 1,
                CorpusIssueKind::InvisibleTarget => report.invisible_target += 1,
            }
            report.issues.push(CorpusIssue {
                example: n,
                page_id: ex.page_id.clone(),
                target_id: ex.target_id.clone(),
                kind,
            });
        }
    }
    report
}
