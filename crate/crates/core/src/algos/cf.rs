//! User-based collaborative filtering.
//!
//! The predicted rating is the user's mean plus the similarity-weighted
//! average deviation of neighbors who rated the item:
//!
//! ```text
//! r̂(u,i) = r̄(u) + Σ_v (r(v,i) − r̄(v))·sim(u,v) / Σ_v |sim(u,v)|
//! ```
//!
//! Sums run over neighbors in ascending user id so repeated or parallel
//! calls produce bit-identical results.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{top_n, ScoredItem};
use crate::ingest::{Behavior, Interaction};
use crate::{ItemId, UserId};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum CfError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("rating {rating} for user {user} item {item} is outside 1-5")]
    InvalidRating { user: UserId, item: ItemId, rating: f64 },
}

/// Pseudo-rating for implicit feedback so behavior logs can feed the
/// rating matrix.
pub fn implicit_rating(kind: Behavior) -> f64 {
    match kind {
        Behavior::Rating(v) => v as f64,
        Behavior::Browse => 3.0,
        Behavior::Click => 4.0,
        Behavior::Purchase => 5.0,
    }
}

/// Sparse user × item ratings with cached per-user means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingMatrix {
    by_user: BTreeMap<UserId, BTreeMap<ItemId, f64>>,
    user_means: BTreeMap<UserId, f64>,
    items: BTreeSet<ItemId>,
}

impl RatingMatrix {
    /// Builds from `(user, item, rating)` triples; a repeated pair keeps the
    /// last rating.
    pub fn from_ratings(ratings: impl IntoIterator<Item = (UserId, ItemId, f64)>) -> Result<Self, CfError> {
        let mut by_user: BTreeMap<UserId, BTreeMap<ItemId, f64>> = BTreeMap::new();
        for (user, item, rating) in ratings {
            if !(MIN_RATING..=MAX_RATING).contains(&rating) {
                return Err(CfError::InvalidRating { user, item, rating });
            }
            by_user.entry(user).or_default().insert(item, rating);
        }
        let user_means = by_user.iter().map(|(u, r)| (*u, r.values().sum::<f64>() / r.len() as f64)).collect();
        let items = by_user.values().flat_map(|r| r.keys().copied()).collect();
        Ok(RatingMatrix { by_user, user_means, items })
    }

    /// Builds from interactions. Explicit ratings win over implicit events;
    /// the latest rating wins among ratings, and the strongest event wins
    /// among implicit events.
    pub fn from_interactions(interactions: &[Interaction]) -> Self {
        let mut explicit: BTreeMap<(UserId, ItemId), (u64, f64)> = BTreeMap::new();
        let mut implicit: BTreeMap<(UserId, ItemId), f64> = BTreeMap::new();
        for it in interactions {
            let key = (it.user_id, it.item_id);
            match it.kind {
                Behavior::Rating(v) => {
                    let slot = explicit.entry(key).or_insert((it.timestamp, v as f64));
                    if it.timestamp >= slot.0 {
                        *slot = (it.timestamp, v as f64);
                    }
                }
                kind => {
                    let slot = implicit.entry(key).or_insert(MIN_RATING);
                    *slot = slot.max(implicit_rating(kind));
                }
            }
        }
        for (key, (_, v)) in explicit {
            implicit.insert(key, v);
        }
        Self::from_ratings(implicit.into_iter().map(|((u, i), r)| (u, i, r)))
            .expect("ratings derived from valid interactions are in range")
    }

    pub fn ratings(&self, user: UserId) -> Option<&BTreeMap<ItemId, f64>> {
        self.by_user.get(&user)
    }

    pub fn rating(&self, user: UserId, item: ItemId) -> Option<f64> {
        self.by_user.get(&user)?.get(&item).copied()
    }

    pub fn mean(&self, user: UserId) -> Option<f64> {
        self.user_means.get(&user).copied()
    }

    pub fn contains_user(&self, user: UserId) -> bool {
        self.by_user.contains_key(&user)
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.by_user.keys().copied()
    }

    pub fn items(&self) -> &BTreeSet<ItemId> {
        &self.items
    }

    pub fn n_users(&self) -> usize {
        self.by_user.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    #[default]
    Pearson,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfConfig {
    pub k_neighbors: usize,
    pub min_overlap: usize,
    pub sim: Similarity,
    /// Neighbors need `|sim| >= similarity_floor`; zero similarity is never kept.
    pub similarity_floor: f64,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig { k_neighbors: 40, min_overlap: 2, sim: Similarity::Pearson, similarity_floor: 0.0 }
    }
}

/// Co-rated `(u_rating, v_rating)` pairs in ascending item order.
fn co_rated(u: &BTreeMap<ItemId, f64>, v: &BTreeMap<ItemId, f64>) -> Vec<(f64, f64)> {
    let (mut a, mut b) = (u.iter().peekable(), v.iter().peekable());
    let mut out = Vec::new();
    while let (Some((ia, ra)), Some((ib, rb))) = (a.peek(), b.peek()) {
        match ia.cmp(ib) {
            std::cmp::Ordering::Less => {
                a.next();
            }
            std::cmp::Ordering::Greater => {
                b.next();
            }
            std::cmp::Ordering::Equal => {
                out.push((**ra, **rb));
                a.next();
                b.next();
            }
        }
    }
    out
}

/// Pearson correlation over co-rated items. Returns 0 when fewer than
/// `min_overlap` items are shared or either side has zero variance.
pub fn pearson_sim(u: &BTreeMap<ItemId, f64>, v: &BTreeMap<ItemId, f64>, min_overlap: usize) -> f64 {
    let pairs = co_rated(u, v);
    if pairs.is_empty() || pairs.len() < min_overlap {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        let (da, db) = (a - mean_a, b - mean_b);
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return 0.0;
    }
    (cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0)
}

/// Cosine of the raw co-rated rating vectors.
pub fn cosine_sim(u: &BTreeMap<ItemId, f64>, v: &BTreeMap<ItemId, f64>, min_overlap: usize) -> f64 {
    let pairs = co_rated(u, v);
    if pairs.is_empty() || pairs.len() < min_overlap {
        return 0.0;
    }
    let dot: f64 = pairs.iter().map(|(a, b)| a * b).sum();
    let na = pairs.iter().map(|p| p.0 * p.0).sum::<f64>().sqrt();
    let nb = pairs.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// The users most similar to a target user.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Neighborhood {
    /// Sorted by descending `|sim|`, ties by ascending user id.
    pub members: Vec<(UserId, f64)>,
    by_user: Vec<(UserId, f64)>,
}

impl Neighborhood {
    /// Sorts and caps `candidates`, dropping zero similarities and those
    /// under `floor`.
    pub fn from_candidates(candidates: Vec<(UserId, f64)>, k: usize, floor: f64) -> Self {
        let mut members: Vec<_> = candidates.into_iter().filter(|(_, s)| *s != 0.0 && s.abs() >= floor).collect();
        members.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        members.truncate(k);
        let mut by_user = members.clone();
        by_user.sort_by_key(|m| m.0);
        Neighborhood { members, by_user }
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    /// Members in ascending user id order.
    pub fn by_user(&self) -> &[(UserId, f64)] {
        &self.by_user
    }
}

pub fn build_neighborhood(m: &RatingMatrix, user: UserId, cfg: &CfConfig) -> Result<Neighborhood, CfError> {
    let target = m.ratings(user).ok_or(CfError::UnknownUser(user))?;
    let sim = match cfg.sim {
        Similarity::Pearson => pearson_sim,
        Similarity::Cosine => cosine_sim,
    };
    let candidates = m
        .by_user
        .iter()
        .filter(|(v, _)| **v != user)
        .map(|(v, ratings)| (*v, sim(target, ratings, cfg.min_overlap)))
        .collect();
    Ok(Neighborhood::from_candidates(candidates, cfg.k_neighbors, cfg.similarity_floor))
}

fn clamp_rating(r: f64) -> f64 {
    r.clamp(MIN_RATING, MAX_RATING)
}

/// Predicted rating of `item` for `user`, falling back to the user's mean
/// when no neighbor rated the item.
pub fn predict_cf(m: &RatingMatrix, user: UserId, item: ItemId, hood: &Neighborhood) -> Result<f64, CfError> {
    let mean_u = m.mean(user).ok_or(CfError::UnknownUser(user))?;
    let (mut num, mut den) = (0.0, 0.0);
    for &(v, s) in hood.by_user() {
        if let (Some(r), Some(mean_v)) = (m.rating(v, item), m.mean(v)) {
            num += (r - mean_v) * s;
            den += s.abs();
        }
    }
    if den == 0.0 {
        return Ok(mean_u);
    }
    Ok(clamp_rating(mean_u + num / den))
}

/// Top-`n` unrated items by predicted rating, using a prebuilt neighborhood.
pub fn recommend_cf_with(
    m: &RatingMatrix,
    user: UserId,
    hood: &Neighborhood,
    n: usize,
) -> Result<Vec<ScoredItem>, CfError> {
    let seen = m.ratings(user).ok_or(CfError::UnknownUser(user))?;
    let mean_u = m.mean(user).ok_or(CfError::UnknownUser(user))?;
    // Same accumulation order as predict_cf, batched over items.
    let mut acc: BTreeMap<ItemId, (f64, f64)> = BTreeMap::new();
    for &(v, s) in hood.by_user() {
        let (Some(ratings), Some(mean_v)) = (m.ratings(v), m.mean(v)) else { continue };
        for (&item, &r) in ratings {
            if seen.contains_key(&item) {
                continue;
            }
            let slot = acc.entry(item).or_insert((0.0, 0.0));
            slot.0 += (r - mean_v) * s;
            slot.1 += s.abs();
        }
    }
    let scored = m
        .items()
        .iter()
        .filter(|item| !seen.contains_key(item))
        .map(|&item| {
            let score = match acc.get(&item) {
                Some(&(num, den)) if den != 0.0 => clamp_rating(mean_u + num / den),
                _ => mean_u,
            };
            ScoredItem::new(item, score)
        })
        .collect();
    Ok(top_n(scored, n))
}

/// Builds the neighborhood once and ranks every unrated item.
pub fn recommend_cf(m: &RatingMatrix, user: UserId, cfg: &CfConfig, n: usize) -> Result<Vec<ScoredItem>, CfError> {
    let hood = build_neighborhood(m, user, cfg)?;
    recommend_cf_with(m, user, &hood, n)
}
