//! Content-based scoring: the interest of user `u` in item `i` is the
//! weighted feature overlap `sum_k w_uk * w_ik`, computed as a cosine so the
//! profile's overall magnitude does not matter.

use std::collections::BTreeSet;

use super::{top_n, ScoredItem};
use crate::profile::{cosine, FeatureVector, ItemFeatureIndex, UserInterestProfile};
use crate::ItemId;

/// Cosine between the profile and an item vector; 0 for an empty profile or
/// a zero-flagged item.
pub fn score_content(profile: &UserInterestProfile, item: &FeatureVector) -> f64 {
    cosine(&profile.weights, item)
}

/// Top-`n` items outside `exclude` with a positive content score.
pub fn recommend_content(
    profile: &UserInterestProfile,
    index: &ItemFeatureIndex,
    exclude: &BTreeSet<ItemId>,
    n: usize,
) -> Vec<ScoredItem> {
    if profile.weights.is_empty() || n == 0 {
        return Vec::new();
    }
    let scored = index
        .vectors()
        .filter(|(item, _)| !exclude.contains(item))
        .map(|(item, v)| ScoredItem::new(item, score_content(profile, v)))
        .filter(|s| s.score > 0.0)
        .collect();
    top_n(scored, n)
}
