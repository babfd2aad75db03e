//! Level-wise Apriori mining and rule-based recommendation.
//!
//! Each frequent itemset keeps its transaction id set as a bitset, so the
//! support of a joined candidate is the popcount of its two parents' AND.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ScoredItem;
use crate::ItemId;

/// Sorted, duplicate-free item list.
pub type Itemset = Vec<ItemId>;

pub const RULES_CSV_HEADER: &str = "antecedent,consequent,support,confidence";

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("min_support must be in (0, 1], got {0}")]
    MinSupport(f64),
    #[error("min_confidence must be in (0, 1], got {0}")]
    MinConfidence(f64),
    #[error("max_len and max_consequent_len must be at least 1")]
    Length,
    #[error("rules csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub min_support: f64,
    pub min_confidence: f64,
    /// Largest frequent itemset size mined.
    pub max_len: usize,
    /// Largest consequent size; 1 gives single-item consequents.
    pub max_consequent_len: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig { min_support: 0.01, min_confidence: 0.3, max_len: 3, max_consequent_len: 1 }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), RuleError> {
        if !(self.min_support > 0.0 && self.min_support <= 1.0) {
            return Err(RuleError::MinSupport(self.min_support));
        }
        if !(self.min_confidence > 0.0 && self.min_confidence <= 1.0) {
            return Err(RuleError::MinConfidence(self.min_confidence));
        }
        if self.max_len == 0 || self.max_consequent_len == 0 {
            return Err(RuleError::Length);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequentItemset {
    pub items: Itemset,
    pub count: usize,
    pub support: f64,
}

/// `antecedent → consequent` with its support and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRule {
    pub antecedent: Itemset,
    pub consequent: Itemset,
    pub support: f64,
    pub confidence: f64,
}

#[derive(Clone)]
struct Bitset(Vec<u64>);

impl Bitset {
    fn new(len: usize) -> Self {
        Bitset(vec![0; len.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn and(&self, other: &Bitset) -> Bitset {
        Bitset(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
}

fn support(count: usize, n: usize) -> f64 {
    count as f64 / n as f64
}

/// All itemsets of size ≤ `max_len` whose support reaches `min_support`,
/// ordered by size then lexicographically.
pub fn frequent_itemsets(
    transactions: &[Vec<ItemId>],
    min_support: f64,
    max_len: usize,
) -> Result<Vec<FrequentItemset>, RuleError> {
    RuleConfig { min_support, max_len, ..Default::default() }.validate()?;
    let n = transactions.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut tidsets: BTreeMap<ItemId, Bitset> = BTreeMap::new();
    for (t, items) in transactions.iter().enumerate() {
        for &item in items {
            tidsets.entry(item).or_insert_with(|| Bitset::new(n)).set(t);
        }
    }

    let mut level: Vec<(Itemset, Bitset, usize)> = tidsets
        .into_iter()
        .map(|(item, bits)| {
            let c = bits.count();
            (vec![item], bits, c)
        })
        .filter(|(_, _, c)| support(*c, n) >= min_support)
        .collect();

    let mut out = Vec::new();
    let mut size = 1;
    while !level.is_empty() {
        out.extend(level.iter().map(|(items, _, c)| FrequentItemset {
            items: items.clone(),
            count: *c,
            support: support(*c, n),
        }));
        if size == max_len {
            break;
        }
        let known: HashSet<&[ItemId]> = level.iter().map(|(s, _, _)| s.as_slice()).collect();
        let mut next = Vec::new();
        for (a_idx, (a, a_bits, _)) in level.iter().enumerate() {
            for (b, b_bits, _) in &level[a_idx + 1..] {
                // level is lexicographically sorted, so shared prefixes are contiguous
                if a[..size - 1] != b[..size - 1] {
                    break;
                }
                let mut cand = a.clone();
                cand.push(b[size - 1]);
                let closed = (0..cand.len()).all(|skip| {
                    let sub: Itemset = cand.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, x)| *x).collect();
                    known.contains(sub.as_slice())
                });
                if !closed {
                    continue;
                }
                let bits = a_bits.and(b_bits);
                let c = bits.count();
                if support(c, n) >= min_support {
                    next.push((cand, bits, c));
                }
            }
        }
        level = next;
        size += 1;
    }
    Ok(out)
}

/// Mines association rules from `transactions` (each an unordered item
/// list; duplicates within a transaction are ignored).
///
/// Output is sorted by descending confidence, descending support, then
/// antecedent and consequent lexicographically.
pub fn mine_rules(transactions: &[Vec<ItemId>], cfg: &RuleConfig) -> Result<Vec<AssociationRule>, RuleError> {
    cfg.validate()?;
    let normalized: Vec<Vec<ItemId>> =
        transactions.iter().map(|t| t.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()).collect();
    let n = normalized.len();
    let frequent = frequent_itemsets(&normalized, cfg.min_support, cfg.max_len)?;
    let counts: HashMap<&[ItemId], usize> = frequent.iter().map(|f| (f.items.as_slice(), f.count)).collect();

    let mut rules = Vec::new();
    for f in frequent.iter().filter(|f| f.items.len() >= 2) {
        let max_y = cfg.max_consequent_len.min(f.items.len() - 1);
        for y_len in 1..=max_y {
            for consequent in f.items.iter().copied().combinations(y_len) {
                let antecedent: Itemset = f.items.iter().copied().filter(|x| !consequent.contains(x)).collect();
                let x_count = counts[antecedent.as_slice()];
                let confidence = f.count as f64 / x_count as f64;
                if confidence >= cfg.min_confidence {
                    rules.push(AssociationRule { antecedent, consequent, support: support(f.count, n), confidence });
                }
            }
        }
    }
    rules.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(b.support.total_cmp(&a.support))
            .then_with(|| a.antecedent.cmp(&b.antecedent))
            .then_with(|| a.consequent.cmp(&b.consequent))
    });
    Ok(rules)
}

/// Fires every rule whose antecedent is owned and scores each unowned
/// consequent item by the best confidence (then support) among those rules.
pub fn recommend_rules(rules: &[AssociationRule], owned: &BTreeSet<ItemId>, n: usize) -> Vec<ScoredItem> {
    let mut best: BTreeMap<ItemId, (f64, f64)> = BTreeMap::new();
    for rule in rules {
        if !rule.antecedent.iter().all(|x| owned.contains(x)) {
            continue;
        }
        for &item in rule.consequent.iter().filter(|y| !owned.contains(y)) {
            let slot = best.entry(item).or_insert((rule.confidence, rule.support));
            if (rule.confidence, rule.support) > *slot {
                *slot = (rule.confidence, rule.support);
            }
        }
    }
    let mut ranked: Vec<(ItemId, f64, f64)> = best.into_iter().map(|(i, (c, s))| (i, c, s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(i, c, _)| ScoredItem::new(i, c)).collect()
}

fn join_items(items: &[ItemId]) -> String {
    items.iter().map(ItemId::to_string).join("|")
}

/// CSV with `|`-joined itemsets; numbers use shortest round-trip form.
pub fn rules_to_csv(rules: &[AssociationRule]) -> String {
    let mut out = format!("{RULES_CSV_HEADER}\n");
    for r in rules {
        let _ =
            writeln!(out, "{},{},{},{}", join_items(&r.antecedent), join_items(&r.consequent), r.support, r.confidence);
    }
    out
}

pub fn rules_from_csv(text: &str) -> Result<Vec<AssociationRule>, RuleError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == RULES_CSV_HEADER => {}
        _ => return Err(RuleError::Csv { line: 1, reason: "missing header".into() }),
    }
    let mut rules = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let err = |reason: &str| RuleError::Csv { line, reason: reason.to_string() };
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 4 {
            return Err(err("expected 4 fields"));
        }
        let itemset = |s: &str| -> Result<Itemset, RuleError> {
            s.split('|').map(|x| x.parse::<ItemId>().map_err(|_| err("bad item id"))).collect()
        };
        rules.push(AssociationRule {
            antecedent: itemset(fields[0])?,
            consequent: itemset(fields[1])?,
            support: fields[2].parse().map_err(|_| err("bad support"))?,
            confidence: fields[3].parse().map_err(|_| err("bad confidence"))?,
        });
    }
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: ItemId = 1;
    const B: ItemId = 2;
    const C: ItemId = 3;

    fn cfg(min_support: f64, min_confidence: f64) -> RuleConfig {
        RuleConfig { min_support, min_confidence, max_len: 3, max_consequent_len: 1 }
    }

    #[test]
    fn three_transaction_example() {
        let tx = vec![vec![A, B], vec![A, B], vec![A, C]];
        let freq = frequent_itemsets(&tx, 0.6, 3).unwrap();
        let got: Vec<(Itemset, f64)> = freq.iter().map(|f| (f.items.clone(), f.support)).collect();
        assert_eq!(got, vec![(vec![A], 1.0), (vec![B], 2.0 / 3.0), (vec![A, B], 2.0 / 3.0)]);

        let rules = mine_rules(&tx, &cfg(0.6, 0.6)).unwrap();
        assert_eq!(
            rules,
            vec![
                AssociationRule { antecedent: vec![B], consequent: vec![A], support: 2.0 / 3.0, confidence: 1.0 },
                AssociationRule { antecedent: vec![A], consequent: vec![B], support: 2.0 / 3.0, confidence: 2.0 / 3.0 },
            ]
        );
    }

    #[test]
    fn threshold_above_every_frequency() {
        let tx = vec![vec![A, B], vec![B, C], vec![A, C]];
        assert!(mine_rules(&tx, &cfg(1.0, 0.1)).unwrap().is_empty());
    }

    #[test]
    fn single_transaction_all_subsets_frequent() {
        let freq = frequent_itemsets(&[vec![A, B, C]], 1.0, 3).unwrap();
        assert_eq!(freq.len(), 7);
        assert!(freq.iter().all(|f| f.support == 1.0));
    }

    #[test]
    fn empty_transactions() {
        assert!(mine_rules(&[], &RuleConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn invalid_thresholds() {
        assert_eq!(mine_rules(&[], &cfg(0.0, 0.5)), Err(RuleError::MinSupport(0.0)));
        assert_eq!(mine_rules(&[], &cfg(0.5, 1.5)), Err(RuleError::MinConfidence(1.5)));
    }

    #[test]
    fn multi_item_consequents() {
        let tx = vec![vec![A, B, C], vec![A, B, C], vec![A]];
        let rules = mine_rules(&tx, &RuleConfig { max_consequent_len: 2, ..cfg(0.5, 0.5) }).unwrap();
        assert!(rules.iter().any(|r| r.antecedent == vec![A] && r.consequent == vec![B, C]));
        let singles = mine_rules(&tx, &cfg(0.5, 0.5)).unwrap();
        assert!(singles.iter().all(|r| r.consequent.len() == 1));
    }

    #[test]
    fn recommend_from_rules() {
        let rules = vec![AssociationRule { antecedent: vec![A], consequent: vec![B], support: 0.5, confidence: 0.8 }];
        assert!(recommend_rules(&rules, &BTreeSet::from([C]), 5).is_empty());
        assert_eq!(recommend_rules(&rules, &BTreeSet::from([A]), 5), vec![ScoredItem::new(B, 0.8)]);
        assert!(recommend_rules(&rules, &BTreeSet::from([A, B]), 5).is_empty());
    }

    #[test]
    fn recommend_takes_best_rule_per_item() {
        let rule = |x: Vec<ItemId>, y: ItemId, s: f64, c: f64| AssociationRule {
            antecedent: x,
            consequent: vec![y],
            support: s,
            confidence: c,
        };
        let rules = vec![
            rule(vec![A], C, 0.2, 0.5),
            rule(vec![B], C, 0.1, 0.9),
            rule(vec![A], 4, 0.4, 0.9),
            rule(vec![A, B], 5, 0.3, 0.95),
        ];
        let recs = recommend_rules(&rules, &BTreeSet::from([A, B]), 2);
        assert_eq!(recs, vec![ScoredItem::new(5, 0.95), ScoredItem::new(4, 0.9)]);
    }

    #[test]
    fn csv_round_trip() {
        let tx = vec![vec![A, B, C], vec![A, B], vec![B, C], vec![A, C]];
        let rules = mine_rules(&tx, &RuleConfig { max_consequent_len: 2, ..cfg(0.25, 0.1) }).unwrap();
        let csv = rules_to_csv(&rules);
        assert!(csv.starts_with("antecedent,consequent,support,confidence\n"));
        assert_eq!(rules_from_csv(&csv).unwrap(), rules);
        assert_eq!(rules_to_csv(&[]), "antecedent,consequent,support,confidence\n");
    }

    /// Enumerates every itemset and rule directly.
    fn exhaustive(tx: &[Vec<ItemId>], c: &RuleConfig) -> Vec<AssociationRule> {
        let sets: Vec<BTreeSet<ItemId>> = tx.iter().map(|t| t.iter().copied().collect()).collect();
        let universe: Vec<ItemId> = sets.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let n = sets.len() as f64;
        let count = |s: &[ItemId]| sets.iter().filter(|t| s.iter().all(|x| t.contains(x))).count() as f64;
        let mut rules = Vec::new();
        for mask in 1u32..(1 << universe.len()) {
            let z: Vec<ItemId> = (0..universe.len()).filter(|b| mask & (1 << b) != 0).map(|b| universe[b]).collect();
            if z.len() < 2 || z.len() > c.max_len || count(&z) / n < c.min_support {
                continue;
            }
            for ymask in 1u32..(1 << z.len()) - 1 {
                let y: Vec<ItemId> = (0..z.len()).filter(|b| ymask & (1 << b) != 0).map(|b| z[b]).collect();
                let x: Vec<ItemId> = (0..z.len()).filter(|b| ymask & (1 << b) == 0).map(|b| z[b]).collect();
                if y.len() > c.max_consequent_len {
                    continue;
                }
                let conf = count(&z) / count(&x);
                if conf >= c.min_confidence {
                    rules.push(AssociationRule {
                        antecedent: x,
                        consequent: y,
                        support: count(&z) / n,
                        confidence: conf,
                    });
                }
            }
        }
        rules
    }

    fn arb_transactions() -> impl Strategy<Value = Vec<Vec<ItemId>>> {
        proptest::collection::vec(proptest::collection::vec(1u32..=8, 0..6), 1..=20)
    }

    proptest! {
        #[test]
        fn matches_exhaustive_enumeration(tx in arb_transactions(), s in 0.05f64..0.6, c in 0.05f64..1.0, y in 1usize..3) {
            let config = RuleConfig { min_support: s, min_confidence: c, max_len: 4, max_consequent_len: y };
            let mined = mine_rules(&tx, &config).unwrap();
            let expected = exhaustive(&tx, &config);
            prop_assert_eq!(mined.len(), expected.len());
            for e in &expected {
                let m = mined.iter().find(|r| r.antecedent == e.antecedent && r.consequent == e.consequent);
                prop_assert!(m.is_some());
                let m = m.unwrap();
                prop_assert!((m.support - e.support).abs() < 1e-12);
                prop_assert!((m.confidence - e.confidence).abs() < 1e-12);
            }
        }

        #[test]
        fn downward_closure(tx in arb_transactions(), s in 0.05f64..0.6) {
            let freq = frequent_itemsets(&tx.iter().map(|t| t.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()).collect::<Vec<_>>(), s, 8).unwrap();
            let known: HashSet<Itemset> = freq.iter().map(|f| f.items.clone()).collect();
            for f in &freq {
                for k in 1..f.items.len() {
                    for sub in f.items.iter().copied().combinations(k) {
                        prop_assert!(known.contains(&sub));
                    }
                }
            }
        }

        #[test]
        fn rule_invariants(tx in arb_transactions(), s in 0.05f64..0.6, c in 0.05f64..1.0) {
            let freq: HashMap<Itemset, f64> = frequent_itemsets(
                &tx.iter().map(|t| t.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()).collect::<Vec<_>>(), s, 3)
                .unwrap().into_iter().map(|f| (f.items, f.support)).collect();
            for r in mine_rules(&tx, &cfg(s, c)).unwrap() {
                prop_assert!(!r.antecedent.is_empty() && !r.consequent.is_empty());
                prop_assert!(r.antecedent.iter().all(|x| !r.consequent.contains(x)));
                prop_assert!(r.support > 0.0 && r.support <= 1.0 && r.confidence > 0.0 && r.confidence <= 1.0);
                let mut union = r.antecedent.clone();
                union.extend(&r.consequent);
                union.sort_unstable();
                prop_assert!((r.confidence - freq[&union] / freq[&r.antecedent]).abs() < 1e-12);
            }
        }
    }
}
