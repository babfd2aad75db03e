//! Base recommenders: content scoring, user-based collaborative filtering,
//! and association rules.

pub mod cf;
pub mod content;
pub mod rules;

use serde::{Deserialize, Serialize};

use crate::ItemId;

pub use cf::{
    build_neighborhood, pearson_sim, predict_cf, recommend_cf, CfConfig, CfError, Neighborhood, RatingMatrix,
    Similarity,
};
pub use content::{recommend_content, score_content};
pub use rules::{mine_rules, recommend_rules, AssociationRule, RuleConfig, RuleError};

/// An item with the score some recommender gave it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: ItemId,
    pub score: f64,
}

impl ScoredItem {
    pub fn new(item_id: ItemId, score: f64) -> Self {
        ScoredItem { item_id, score }
    }
}

/// Sorts by descending score, ties by ascending item id, and keeps `n`.
pub fn top_n(mut items: Vec<ScoredItem>, n: usize) -> Vec<ScoredItem> {
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item_id.cmp(&b.item_id)));
    items.truncate(n);
    items
}
