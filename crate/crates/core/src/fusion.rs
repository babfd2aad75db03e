//! Weighted fusion of per-algorithm ranked lists.
//!
//! Scores from different recommenders live on different scales (cosine,
//! predicted rating, rule confidence), so each list is min-max normalized
//! before the weighted sum. An item missing from a list contributes zero
//! for that list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algos::{top_n, ScoredItem};
use crate::ItemId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Content,
    Cf,
    Rules,
    Hybrid,
}

impl Algorithm {
    /// The three base recommenders, in canonical order.
    pub const BASE: [Algorithm; 3] = [Algorithm::Content, Algorithm::Cf, Algorithm::Rules];
    /// Report order.
    pub const ALL: [Algorithm; 4] = [Algorithm::Content, Algorithm::Cf, Algorithm::Rules, Algorithm::Hybrid];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Content => "content",
            Algorithm::Cf => "cf",
            Algorithm::Rules => "rules",
            Algorithm::Hybrid => "hybrid",
        }
    }

    pub fn is_base(&self) -> bool {
        !matches!(self, Algorithm::Hybrid)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "content" => Ok(Algorithm::Content),
            "cf" => Ok(Algorithm::Cf),
            "rules" => Ok(Algorithm::Rules),
            "hybrid" => Ok(Algorithm::Hybrid),
            other => Err(FusionError::UnknownAlgorithm(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("fusion weights only apply to base algorithms, got {0}")]
    NotBase(Algorithm),
    #[error("weight for {0} must be nonnegative and finite")]
    BadWeight(Algorithm),
    #[error("weights sum to {0}, expected 1")]
    BadSum(f64),
    #[error("item {0} appears twice in one ranked list")]
    DuplicateItem(ItemId),
    #[error("non-finite score for item {0}")]
    NonFiniteScore(ItemId),
    #[error("algorithm {0} supplied more than one list")]
    DuplicateList(Algorithm),
}

/// Per-algorithm weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Algorithm, f64>", into = "BTreeMap<Algorithm, f64>")]
pub struct FusionWeights {
    weights: BTreeMap<Algorithm, f64>,
}

impl FusionWeights {
    /// Accepts weights that already sum to 1 ± 1e-9.
    pub fn new(weights: BTreeMap<Algorithm, f64>) -> Result<Self, FusionError> {
        Self::check(&weights)?;
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FusionError::BadSum(sum));
        }
        Ok(FusionWeights { weights })
    }

    /// Rescales arbitrary nonnegative weights to sum to one.
    pub fn normalized(weights: BTreeMap<Algorithm, f64>) -> Result<Self, FusionError> {
        Self::check(&weights)?;
        let sum: f64 = weights.values().sum();
        if sum <= 0.0 {
            return Err(FusionError::BadSum(sum));
        }
        Ok(FusionWeights { weights: weights.into_iter().map(|(a, w)| (a, w / sum)).collect() })
    }

    pub fn uniform() -> Self {
        let w = 1.0 / Algorithm::BASE.len() as f64;
        FusionWeights { weights: Algorithm::BASE.iter().map(|a| (*a, w)).collect() }
    }

    fn check(weights: &BTreeMap<Algorithm, f64>) -> Result<(), FusionError> {
        for (a, w) in weights {
            if !a.is_base() {
                return Err(FusionError::NotBase(*a));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(FusionError::BadWeight(*a));
            }
        }
        Ok(())
    }

    pub fn get(&self, algorithm: Algorithm) -> f64 {
        self.weights.get(&algorithm).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Algorithm, f64)> + '_ {
        self.weights.iter().map(|(a, w)| (*a, *w))
    }

    pub fn sum(&self) -> f64 {
        self.weights.values().sum()
    }
}

impl TryFrom<BTreeMap<Algorithm, f64>> for FusionWeights {
    type Error = FusionError;

    fn try_from(value: BTreeMap<Algorithm, f64>) -> Result<Self, Self::Error> {
        FusionWeights::new(value)
    }
}

impl From<FusionWeights> for BTreeMap<Algorithm, f64> {
    fn from(value: FusionWeights) -> Self {
        value.weights
    }
}

/// One algorithm's output, sorted by descending score then ascending item id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    algorithm: Algorithm,
    items: Vec<ScoredItem>,
}

impl RankedList {
    pub fn new(algorithm: Algorithm, items: Vec<ScoredItem>) -> Result<Self, FusionError> {
        let mut seen = BTreeSet::new();
        for s in &items {
            if !s.score.is_finite() {
                return Err(FusionError::NonFiniteScore(s.item_id));
            }
            if !seen.insert(s.item_id) {
                return Err(FusionError::DuplicateItem(s.item_id));
            }
        }
        let len = items.len();
        Ok(RankedList { algorithm, items: top_n(items, len) })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn items(&self) -> &[ScoredItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|s| s.item_id).collect()
    }
}

/// Min-max rescales scores to [0, 1]. A single item or a constant list maps
/// every score to 1.
pub fn normalize_scores(list: &RankedList) -> RankedList {
    let (lo, hi) =
        list.items.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.score), hi.max(s.score)));
    let items = list
        .items
        .iter()
        .map(|s| {
            let score = if hi > lo { (s.score - lo) / (hi - lo) } else { 1.0 };
            ScoredItem::new(s.item_id, score)
        })
        .collect();
    RankedList { algorithm: list.algorithm, items }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedItem {
    pub item_id: ItemId,
    pub score: f64,
    /// Lists with positive weight that contained the item.
    pub contributors: Vec<Algorithm>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusedList {
    pub items: Vec<FusedItem>,
}

impl FusedList {
    pub fn to_ranked_list(&self) -> RankedList {
        RankedList {
            algorithm: Algorithm::Hybrid,
            items: self.items.iter().map(|f| ScoredItem::new(f.item_id, f.score)).collect(),
        }
    }

    pub fn item_ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|f| f.item_id).collect()
    }

    /// CSV `rank,item_id,score,contributing_algorithms`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,item_id,score,contributing_algorithms\n");
        for (rank, f) in self.items.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.6},{}", rank + 1, f.item_id, f.score, f.contributors.iter().join("|"));
        }
        out
    }
}

/// Weighted sum of normalized lists, top-`n` by fused score then item id.
///
/// Weight mass on algorithms without a list is spread proportionally over
/// the lists present; if none of the present lists carries weight, they are
/// weighted uniformly. Items that only appear in zero-weight lists are
/// dropped.
pub fn fuse(lists: &[RankedList], w: &FusionWeights, n: usize) -> Result<FusedList, FusionError> {
    let mut by_alg: BTreeMap<Algorithm, &RankedList> = BTreeMap::new();
    for list in lists {
        if by_alg.insert(list.algorithm, list).is_some() {
            return Err(FusionError::DuplicateList(list.algorithm));
        }
    }
    if by_alg.is_empty() {
        return Ok(FusedList::default());
    }
    let mass: f64 = by_alg.keys().map(|a| w.get(*a)).sum();
    let effective: BTreeMap<Algorithm, f64> = by_alg
        .keys()
        .map(|a| {
            let weight = if mass > 0.0 { w.get(*a) / mass } else { 1.0 / by_alg.len() as f64 };
            (*a, weight)
        })
        .collect();

    let mut acc: BTreeMap<ItemId, (f64, Vec<Algorithm>)> = BTreeMap::new();
    for (alg, list) in &by_alg {
        let weight = effective[alg];
        if weight <= 0.0 {
            continue;
        }
        for s in &list.items {
            let slot = acc.entry(s.item_id).or_insert((0.0, Vec::new()));
            slot.0 += weight * s.score;
            slot.1.push(*alg);
        }
    }

    let mut items: Vec<FusedItem> =
        acc.into_iter().map(|(item_id, (score, contributors))| FusedItem { item_id, score, contributors }).collect();
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item_id.cmp(&b.item_id)));
    items.truncate(n);
    Ok(FusedList { items })
}

/// Weights proportional to each algorithm's F1; uniform when all are zero.
/// An empty map yields uniform weights over the base algorithms.
pub fn derive_weights(per_algorithm_f1: &BTreeMap<Algorithm, f64>) -> FusionWeights {
    let clean: BTreeMap<Algorithm, f64> = per_algorithm_f1
        .iter()
        .filter(|(a, _)| a.is_base())
        .map(|(a, f)| (*a, if f.is_finite() { f.max(0.0) } else { 0.0 }))
        .collect();
    if clean.is_empty() {
        return FusionWeights::uniform();
    }
    let total: f64 = clean.values().sum();
    let weights = if total > 0.0 {
        clean.into_iter().map(|(a, f)| (a, f / total)).collect()
    } else {
        let u = 1.0 / clean.len() as f64;
        clean.into_keys().map(|a| (a, u)).collect()
    };
    FusionWeights { weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(alg: Algorithm, items: &[(ItemId, f64)]) -> RankedList {
        RankedList::new(alg, items.iter().map(|&(i, s)| ScoredItem::new(i, s)).collect()).unwrap()
    }

    fn scores(l: &RankedList) -> Vec<f64> {
        l.items().iter().map(|s| s.score).collect()
    }

    fn weights(c: f64, f: f64, r: f64) -> FusionWeights {
        FusionWeights::new(BTreeMap::from([(Algorithm::Content, c), (Algorithm::Cf, f), (Algorithm::Rules, r)]))
            .unwrap()
    }

    #[test]
    fn min_max_normalization() {
        let l = list(Algorithm::Cf, &[(1, 5.0), (2, 3.0), (3, 1.0)]);
        assert_eq!(scores(&normalize_scores(&l)), vec![1.0, 0.5, 0.0]);
        assert_eq!(scores(&normalize_scores(&list(Algorithm::Cf, &[(9, 4.2)]))), vec![1.0]);
        assert_eq!(scores(&normalize_scores(&list(Algorithm::Cf, &[(1, 2.0), (2, 2.0)]))), vec![1.0, 1.0]);
        let unit = list(Algorithm::Cf, &[(1, 1.0), (2, 0.0)]);
        assert_eq!(normalize_scores(&unit), unit);
    }

    #[test]
    fn ranked_list_rejects_duplicates() {
        let items = vec![ScoredItem::new(1, 0.2), ScoredItem::new(1, 0.3)];
        assert_eq!(RankedList::new(Algorithm::Cf, items), Err(FusionError::DuplicateItem(1)));
    }

    #[test]
    fn ranked_list_sorts() {
        let l = list(Algorithm::Cf, &[(3, 0.5), (1, 0.9), (2, 0.5)]);
        assert_eq!(l.item_ids(), vec![1, 2, 3]);
    }

    #[test]
    fn degenerate_weights_select_one_list() {
        let content = list(Algorithm::Content, &[(1, 1.0), (2, 0.6), (3, 0.0)]);
        let cf = list(Algorithm::Cf, &[(4, 1.0), (2, 0.0)]);
        let fused = fuse(&[content.clone(), cf], &weights(1.0, 0.0, 0.0), 2).unwrap();
        assert_eq!(fused.to_ranked_list().items(), &content.items()[..2]);
    }

    #[test]
    fn identical_lists_fuse_to_themselves() {
        let a = list(Algorithm::Content, &[(1, 1.0), (2, 0.4), (3, 0.0)]);
        let b = RankedList { algorithm: Algorithm::Cf, items: a.items.clone() };
        let fused = fuse(&[a.clone(), b], &weights(0.3, 0.7, 0.0), 10).unwrap();
        for (f, s) in fused.items.iter().zip(a.items()) {
            assert_eq!(f.item_id, s.item_id);
            assert!((f.score - s.score).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_weighted_example() {
        let l1 = list(Algorithm::Content, &[(1, 1.0), (2, 0.5)]);
        let l2 = list(Algorithm::Cf, &[(2, 1.0)]);
        let fused = fuse(&[l1, l2], &weights(0.5, 0.5, 0.0), 10).unwrap();
        assert_eq!(fused.item_ids(), vec![2, 1]);
        assert_eq!(fused.items[0].score, 0.75);
        assert_eq!(fused.items[1].score, 0.5);
        assert_eq!(fused.items[0].contributors, vec![Algorithm::Content, Algorithm::Cf]);
        assert_eq!(
            fused.to_csv(),
            "rank,item_id,score,contributing_algorithms\n1,2,0.750000,content|cf\n2,1,0.500000,content\n"
        );
    }

    #[test]
    fn absent_algorithm_weight_is_renormalized() {
        let l1 = list(Algorithm::Content, &[(1, 1.0)]);
        let l2 = list(Algorithm::Cf, &[(2, 1.0)]);
        // rules weight 0.5 has no list; content and cf split the mass 1:3
        let fused = fuse(&[l1, l2], &weights(0.125, 0.375, 0.5), 10).unwrap();
        assert_eq!(fused.items[0].item_id, 2);
        assert_eq!(fused.items[0].score, 0.75);
        assert_eq!(fused.items[1].score, 0.25);
        let only_rules = weights(0.0, 0.0, 1.0);
        let l1 = list(Algorithm::Content, &[(1, 1.0)]);
        let l2 = list(Algorithm::Cf, &[(2, 1.0)]);
        let fused = fuse(&[l1, l2], &only_rules, 10).unwrap();
        assert_eq!(fused.items.iter().map(|f| f.score).collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn duplicate_list_rejected() {
        let l = list(Algorithm::Cf, &[(1, 1.0)]);
        assert_eq!(fuse(&[l.clone(), l], &FusionWeights::uniform(), 3), Err(FusionError::DuplicateList(Algorithm::Cf)));
    }

    #[test]
    fn derive_weight_cases() {
        let eq =
            derive_weights(&BTreeMap::from([(Algorithm::Content, 0.4), (Algorithm::Cf, 0.4), (Algorithm::Rules, 0.4)]));
        for a in Algorithm::BASE {
            assert!((eq.get(a) - 1.0 / 3.0).abs() < 1e-15);
        }
        let zero =
            derive_weights(&BTreeMap::from([(Algorithm::Content, 0.0), (Algorithm::Cf, 0.0), (Algorithm::Rules, 0.0)]));
        assert_eq!(zero, FusionWeights::uniform());
        // Expected weights are stated to four decimals, so compare those
        // within 1e-4 and the exact ratio within 1e-12.
        let f1 = [(Algorithm::Content, 0.671), (Algorithm::Cf, 0.715), (Algorithm::Rules, 0.642)];
        let table = derive_weights(&BTreeMap::from(f1));
        for ((a, f), quoted) in f1.iter().zip([0.3309, 0.3525, 0.3166]) {
            assert!((table.get(*a) - f / 2.028).abs() < 1e-12);
            assert!((table.get(*a) - quoted).abs() < 1e-4);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(FusionWeights::new(BTreeMap::from([(Algorithm::Cf, 0.5)])).is_err());
        assert!(FusionWeights::new(BTreeMap::from([(Algorithm::Hybrid, 1.0)])).is_err());
        assert!(FusionWeights::normalized(BTreeMap::from([(Algorithm::Cf, -1.0), (Algorithm::Rules, 2.0)])).is_err());
        let w = FusionWeights::normalized(BTreeMap::from([(Algorithm::Cf, 1.0), (Algorithm::Rules, 3.0)])).unwrap();
        assert_eq!(w.get(Algorithm::Rules), 0.75);
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(json, r#"{"cf":0.25,"rules":0.75}"#);
        assert_eq!(serde_json::from_str::<FusionWeights>(&json).unwrap(), w);
    }

    fn arb_list(alg: Algorithm) -> impl Strategy<Value = RankedList> {
        proptest::collection::btree_map(1u32..30, 0.0f64..=1.0, 0..12).prop_map(move |m| {
            RankedList::new(alg, m.into_iter().map(|(i, s)| ScoredItem::new(i, s)).collect()).unwrap()
        })
    }

    fn arb_weights() -> impl Strategy<Value = FusionWeights> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_filter("positive mass", |(a, b, c)| a + b + c > 1e-6).prop_map(
            |(a, b, c)| {
                FusionWeights::normalized(BTreeMap::from([
                    (Algorithm::Content, a),
                    (Algorithm::Cf, b),
                    (Algorithm::Rules, c),
                ]))
                .unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn fused_scores_in_unit_interval(a in arb_list(Algorithm::Content), b in arb_list(Algorithm::Cf), c in arb_list(Algorithm::Rules), w in arb_weights()) {
            let fused = fuse(&[a, b, c], &w, 50).unwrap();
            for f in &fused.items {
                prop_assert!(f.score >= 0.0 && f.score <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn permutation_invariant(a in arb_list(Algorithm::Content), b in arb_list(Algorithm::Cf), c in arb_list(Algorithm::Rules), w in arb_weights()) {
            let x = fuse(&[a.clone(), b.clone(), c.clone()], &w, 20).unwrap();
            let y = fuse(&[c, a, b], &w, 20).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn derived_weights_sum_to_one(f in proptest::collection::vec(0.0f64..=1.0, 3)) {
            let w = derive_weights(&BTreeMap::from([(Algorithm::Content, f[0]), (Algorithm::Cf, f[1]), (Algorithm::Rules, f[2])]));
            prop_assert!((w.sum() - 1.0).abs() < 1e-12);
        }
    }
}
