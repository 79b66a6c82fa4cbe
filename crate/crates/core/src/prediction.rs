use serde::{Deserialize, Serialize};

/// Absolute score difference below which two candidates count as tied.
pub const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedElement {
    pub element_id: String,
    /// Pre-order index of the element on its page.
    pub preorder: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

/// Candidates ranked best-first by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub model_name: String,
    pub ranked: Vec<RankedElement>,
}

impl Prediction {
    pub fn top(&self) -> Option<&RankedElement> {
        self.ranked.first()
    }

    /// 0-based position of an element in the ranking.
    pub fn rank_of(&self, element_id: &str) -> Option<usize> {
        self.ranked.iter().position(|r| r.element_id == element_id)
    }
}

/// Orders `(preorder, score)` pairs best-first.
///
/// Repeatedly takes the remaining candidates whose score is within
/// `epsilon` of the best remaining score and emits the one earliest in
/// pre-order.
pub fn rank_with_ties(items: &[(usize, f64)], epsilon: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .1
            .total_cmp(&items[a].1)
            .then(items[a].0.cmp(&items[b].0))
    });
    let mut out = Vec::with_capacity(items.len());
    while !order.is_empty() {
        let best = items[order[0]].1;
        let window = order
            .iter()
            .take_while(|&&i| best - items[i].1 < epsilon)
            .count()
            .max(1);
        let pick = (0..window)
            .min_by_key(|&w| items[order[w]].0)
            .expect("nonempty window");
        out.push(order.remove(pick));
    }
    out
}
