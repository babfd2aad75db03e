//! Trained models for one set of interactions, and the per-algorithm
//! top-N entry points used by evaluation and the CLI.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::algos::cf::{build_neighborhood, recommend_cf_with, CfError, RatingMatrix};
use crate::algos::rules::{mine_rules, recommend_rules, AssociationRule, RuleError};
use crate::algos::{recommend_content, ScoredItem};
use crate::config::Config;
use crate::fusion::{fuse, normalize_scores, FusedList, FusionError, FusionWeights, RankedList};
use crate::ingest::{Behavior, Catalog, Interaction};
use crate::profile::{build_item_features, build_profiles, ItemFeatureIndex, ProfileError, UserInterestProfile};
use crate::{ItemId, Timestamp, UserId};

pub use crate::fusion::Algorithm;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Cf(#[from] CfError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// True for events counted as positive feedback: purchases, clicks, and
/// ratings at or above `threshold`.
pub fn is_positive(kind: Behavior, threshold: u8) -> bool {
    match kind {
        Behavior::Rating(v) => v >= threshold,
        Behavior::Purchase | Behavior::Click => true,
        Behavior::Browse => false,
    }
}

/// True for held-out events that count as relevant: ratings at or above
/// `threshold`, or purchases.
pub fn is_relevant(kind: Behavior, threshold: u8) -> bool {
    match kind {
        Behavior::Rating(v) => v >= threshold,
        Behavior::Purchase => true,
        _ => false,
    }
}

/// One positive-feedback itemset per user, skipping users with none.
pub fn user_transactions(interactions: &[Interaction], threshold: u8) -> BTreeMap<UserId, BTreeSet<ItemId>> {
    let mut out: BTreeMap<UserId, BTreeSet<ItemId>> = BTreeMap::new();
    for it in interactions.iter().filter(|it| is_positive(it.kind, threshold)) {
        out.entry(it.user_id).or_default().insert(it.item_id);
    }
    out
}

/// Everything fitted from a training set.
#[derive(Debug, Clone)]
pub struct Models {
    pub index: Option<ItemFeatureIndex>,
    pub profiles: BTreeMap<UserId, UserInterestProfile>,
    pub matrix: RatingMatrix,
    pub rules: Vec<AssociationRule>,
    pub baskets: BTreeMap<UserId, BTreeSet<ItemId>>,
    pub seen: BTreeMap<UserId, BTreeSet<ItemId>>,
    pub now: Timestamp,
    cfg: Config,
}

impl Models {
    /// Fits all three base recommenders. Profiles are aged to the latest
    /// training timestamp.
    pub fn fit(interactions: &[Interaction], catalog: &Catalog, cfg: &Config) -> Result<Self, EngineError> {
        let index = if catalog.is_empty() { None } else { Some(build_item_features(catalog)?) };
        Self::fit_with_index(interactions, index, cfg)
    }

    /// Like [`Models::fit`] but reuses a prebuilt feature index.
    pub fn fit_with_index(
        interactions: &[Interaction],
        index: Option<ItemFeatureIndex>,
        cfg: &Config,
    ) -> Result<Self, EngineError> {
        let now = interactions.iter().map(|it| it.timestamp).max().unwrap_or(0);
        let profiles = match &index {
            Some(idx) => build_profiles(interactions, idx, now, &cfg.decay_config())?,
            None => BTreeMap::new(),
        };
        let matrix = RatingMatrix::from_interactions(interactions);
        let baskets = user_transactions(interactions, cfg.eval.relevance_threshold);
        let transactions: Vec<Vec<ItemId>> = baskets.values().map(|b| b.iter().copied().collect()).collect();
        let rules = mine_rules(&transactions, &cfg.rules)?;
        let mut seen: BTreeMap<UserId, BTreeSet<ItemId>> = BTreeMap::new();
        for it in interactions {
            seen.entry(it.user_id).or_default().insert(it.item_id);
        }
        Ok(Models { index, profiles, matrix, rules, baskets, seen, now, cfg: cfg.clone() })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn knows_user(&self, user: UserId) -> bool {
        self.seen.contains_key(&user)
    }

    fn seen_by(&self, user: UserId) -> BTreeSet<ItemId> {
        self.seen.get(&user).cloned().unwrap_or_default()
    }

    pub fn recommend_content(&self, user: UserId, n: usize) -> Vec<ScoredItem> {
        match (&self.index, self.profiles.get(&user)) {
            (Some(idx), Some(p)) => recommend_content(p, idx, &self.seen_by(user), n),
            _ => Vec::new(),
        }
    }

    /// Empty for users absent from the rating matrix (cold start).
    pub fn recommend_cf(&self, user: UserId, n: usize) -> Vec<ScoredItem> {
        if !self.matrix.contains_user(user) {
            return Vec::new();
        }
        let hood = build_neighborhood(&self.matrix, user, &self.cfg.cf).expect("user is in matrix");
        recommend_cf_with(&self.matrix, user, &hood, n).expect("user is in matrix")
    }

    /// True when the user has no neighbor with nonzero similarity, so CF
    /// scores fall back to the user's mean.
    pub fn cf_has_no_peers(&self, user: UserId) -> bool {
        build_neighborhood(&self.matrix, user, &self.cfg.cf).map(|h| h.is_empty()).unwrap_or(true)
    }

    pub fn recommend_rules(&self, user: UserId, n: usize) -> Vec<ScoredItem> {
        let Some(basket) = self.baskets.get(&user) else { return Vec::new() };
        let seen = self.seen_by(user);
        let mut recs = recommend_rules(&self.rules, basket, usize::MAX);
        recs.retain(|s| !seen.contains(&s.item_id));
        recs.truncate(n);
        recs
    }

    /// Base lists (each `fusion.candidates` deep, at least `n`), normalized
    /// and fused.
    pub fn recommend_hybrid(&self, user: UserId, n: usize, weights: &FusionWeights) -> FusedList {
        let depth = self.cfg.fusion.candidates.max(n);
        let lists: Vec<RankedList> = Algorithm::BASE
            .iter()
            .map(|&alg| {
                let items = self.recommend(alg, user, depth, weights);
                normalize_scores(&RankedList::new(alg, items).expect("base lists have unique finite scores"))
            })
            .collect();
        fuse(&lists, weights, n).expect("one list per algorithm")
    }

    pub fn recommend(&self, alg: Algorithm, user: UserId, n: usize, weights: &FusionWeights) -> Vec<ScoredItem> {
        match alg {
            Algorithm::Content => self.recommend_content(user, n),
            Algorithm::Cf => self.recommend_cf(user, n),
            Algorithm::Rules => self.recommend_rules(user, n),
            Algorithm::Hybrid => self.recommend_hybrid(user, n, weights).to_ranked_list().items().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synthetic_catalog, ItemMeta};

    fn catalog() -> Catalog {
        let genres = [("1", "a"), ("2", "a"), ("3", "b"), ("4", "b"), ("5", "a")];
        genres
            .iter()
            .map(|(id, g)| {
                let id: ItemId = id.parse().unwrap();
                (id, ItemMeta { item_id: id, title: String::new(), terms: vec![g.to_string()] })
            })
            .collect()
    }

    #[test]
    fn positive_and_relevant() {
        assert!(is_positive(Behavior::Click, 4));
        assert!(!is_relevant(Behavior::Click, 4));
        assert!(is_relevant(Behavior::Purchase, 4));
        assert!(is_relevant(Behavior::Rating(4), 4));
        assert!(!is_relevant(Behavior::Rating(3), 4));
        assert!(!is_positive(Behavior::Browse, 4));
    }

    #[test]
    fn content_follows_profile_and_skips_seen() {
        let its =
            vec![Interaction::rating(1, 1, 5, 10), Interaction::rating(1, 3, 1, 10), Interaction::rating(2, 4, 5, 10)];
        let m = Models::fit(&its, &catalog(), &Config::default()).unwrap();
        let recs = m.recommend_content(1, 10);
        assert_eq!(recs.iter().map(|s| s.item_id).collect::<Vec<_>>(), vec![2, 5]);
        assert!(m.recommend_content(99, 10).is_empty());
    }

    #[test]
    fn rules_exclude_seen_items() {
        let mut its = Vec::new();
        for u in 1..=4 {
            its.push(Interaction::rating(u, 1, 5, 0));
            its.push(Interaction::rating(u, 2, 5, 0));
        }
        its.push(Interaction::rating(5, 1, 5, 0));
        its.push(Interaction::rating(5, 2, 2, 0));
        let mut cfg = Config::default();
        cfg.rules.min_support = 0.5;
        let m = Models::fit(&its, &catalog(), &cfg).unwrap();
        assert!(m.recommend_rules(5, 5).is_empty());
        let m2 = Models::fit(&its[..8], &catalog(), &cfg).unwrap();
        assert!(m2.recommend_rules(1, 5).is_empty());
    }

    #[test]
    fn hybrid_is_deterministic_and_bounded() {
        let events = crate::ingest::generate_synthetic_events(20, 30, 400, 1).unwrap();
        let m = Models::fit(&events, &synthetic_catalog(30, 8), &Config::default()).unwrap();
        let w = FusionWeights::uniform();
        let a = m.recommend_hybrid(3, 10, &w);
        assert_eq!(a, m.recommend_hybrid(3, 10, &w));
        assert!(a.items.len() <= 10);
        assert!(a.items.iter().all(|f| (0.0..=1.0 + 1e-12).contains(&f.score)));
        let seen = &m.seen[&3];
        assert!(a.items.iter().all(|f| !seen.contains(&f.item_id)));
    }
}
