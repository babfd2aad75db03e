//! TF-IDF item features and time-decayed user interest profiles.
//!
//! A profile is a sparse term-weight vector. Each update first ages the
//! stored weights by the exponential forget function, then adds every new
//! event's item vector scaled by its behavior weight and its own age.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Behavior, Catalog, Interaction};
use crate::{ItemId, Timestamp, UserId};

/// Interned term id. Ids follow the lexicographic order of terms.
pub type FeatureId = u32;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("negative time delta {0}s; clamp clock skew to zero before decaying")]
    NegativeDelta(f64),
    #[error("half-life must be positive and finite, got {0}")]
    InvalidHalfLife(f64),
    #[error("behavior weight for {0} must be nonnegative and finite")]
    InvalidBehaviorWeight(&'static str),
    #[error("cannot build item features from an empty catalog")]
    EmptyCatalog,
    #[error("event for user {found} passed to profile of user {expected}")]
    ForeignEvent { expected: UserId, found: UserId },
    #[error("event at {timestamp} is later than update time {now}")]
    EventInFuture { timestamp: Timestamp, now: Timestamp },
    #[error("update time {now} is earlier than last update {last_updated}")]
    ClockWentBackwards { last_updated: Timestamp, now: Timestamp },
}

/// Sparse nonnegative feature vector. Zero weights are never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    entries: BTreeMap<FeatureId, f64>,
    normalized: bool,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector summing duplicate features; non-positive or
    /// non-finite weights are dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (FeatureId, f64)>) -> Self {
        let mut entries = BTreeMap::new();
        for (k, w) in pairs {
            *entries.entry(k).or_insert(0.0) += w;
        }
        entries.retain(|_, w: &mut f64| w.is_finite() && *w > 0.0);
        FeatureVector { entries, normalized: false }
    }

    pub fn get(&self, feature: FeatureId) -> f64 {
        self.entries.get(&feature).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, f64)> + '_ {
        self.entries.iter().map(|(k, w)| (*k, *w))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when the vector was produced by [`FeatureVector::normalized`].
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.iter().map(|(k, w)| w * large.get(k)).sum()
    }

    /// Unit-norm copy. The zero vector stays zero and unflagged.
    pub fn normalized(&self) -> FeatureVector {
        let norm = self.norm();
        if norm == 0.0 {
            return FeatureVector::new();
        }
        let entries = self.entries.iter().map(|(k, w)| (*k, w / norm)).collect();
        FeatureVector { entries, normalized: true }
    }
}

/// Cosine similarity of two nonnegative vectors; 0 when either is zero.
pub fn cosine(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (a.dot(b) / denom).clamp(0.0, 1.0)
}

/// Normalized TF-IDF vectors for every catalog item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFeatureIndex {
    vectors: BTreeMap<ItemId, FeatureVector>,
    vocabulary: BTreeMap<String, FeatureId>,
    terms: Vec<String>,
    doc_freq: Vec<u32>,
    zero_items: BTreeSet<ItemId>,
}

impl ItemFeatureIndex {
    pub fn vector(&self, item: ItemId) -> Option<&FeatureVector> {
        self.vectors.get(&item)
    }

    pub fn vectors(&self) -> impl Iterator<Item = (ItemId, &FeatureVector)> {
        self.vectors.iter().map(|(k, v)| (*k, v))
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.vectors.contains_key(&item)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn feature_id(&self, term: &str) -> Option<FeatureId> {
        self.vocabulary.get(term).copied()
    }

    pub fn term(&self, feature: FeatureId) -> Option<&str> {
        self.terms.get(feature as usize).map(String::as_str)
    }

    pub fn doc_freq(&self, feature: FeatureId) -> Option<u32> {
        self.doc_freq.get(feature as usize).copied()
    }

    pub fn vocabulary_len(&self) -> usize {
        self.terms.len()
    }

    /// Items with an empty term bag; they carry a zero placeholder vector.
    pub fn is_zero_flagged(&self, item: ItemId) -> bool {
        self.zero_items.contains(&item)
    }

    pub fn idf(&self, feature: FeatureId) -> Option<f64> {
        let df = self.doc_freq(feature)? as f64;
        let n = self.vectors.len() as f64;
        Some(((1.0 + n) / (1.0 + df)).ln() + 1.0)
    }
}

/// Builds TF-IDF vectors with raw term counts and smoothed idf
/// `ln((1+N)/(1+df)) + 1`, each L2-normalized.
pub fn build_item_features(catalog: &Catalog) -> Result<ItemFeatureIndex, ProfileError> {
    if catalog.is_empty() {
        return Err(ProfileError::EmptyCatalog);
    }
    let distinct: BTreeSet<&str> = catalog.values().flat_map(|m| m.terms.iter().map(String::as_str)).collect();
    let terms: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let vocabulary: BTreeMap<String, FeatureId> =
        terms.iter().enumerate().map(|(i, t)| (t.clone(), i as FeatureId)).collect();

    let mut doc_freq = vec![0u32; terms.len()];
    let mut counts: BTreeMap<ItemId, BTreeMap<FeatureId, u32>> = BTreeMap::new();
    for meta in catalog.values() {
        let tf = counts.entry(meta.item_id).or_default();
        for t in &meta.terms {
            *tf.entry(vocabulary[t]).or_insert(0) += 1;
        }
        for k in tf.keys() {
            doc_freq[*k as usize] += 1;
        }
    }

    let n = catalog.len() as f64;
    let idf: Vec<f64> = doc_freq.iter().map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0).collect();
    let mut vectors = BTreeMap::new();
    let mut zero_items = BTreeSet::new();
    for (item, tf) in counts {
        let raw = FeatureVector::from_pairs(tf.iter().map(|(k, c)| (*k, *c as f64 * idf[*k as usize])));
        if raw.is_empty() {
            zero_items.insert(item);
        }
        vectors.insert(item, raw.normalized());
    }
    Ok(ItemFeatureIndex { vectors, vocabulary, terms, doc_freq, zero_items })
}

/// Multipliers applied to each behavior kind when folding events into a
/// profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorWeights {
    pub browse: f64,
    pub click: f64,
    pub purchase: f64,
    pub rating: f64,
}

impl Default for BehaviorWeights {
    fn default() -> Self {
        BehaviorWeights { browse: 0.2, click: 0.5, purchase: 1.0, rating: 1.0 }
    }
}

impl BehaviorWeights {
    pub fn get(&self, kind: Behavior) -> f64 {
        match kind {
            Behavior::Browse => self.browse,
            Behavior::Click => self.click,
            Behavior::Purchase => self.purchase,
            Behavior::Rating(_) => self.rating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConfig {
    pub half_life_secs: f64,
    pub behavior_weights: BehaviorWeights,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { half_life_secs: 30.0 * SECONDS_PER_DAY, behavior_weights: BehaviorWeights::default() }
    }
}

impl DecayConfig {
    pub fn with_half_life_days(days: f64) -> Result<Self, ProfileError> {
        let cfg = DecayConfig { half_life_secs: days * SECONDS_PER_DAY, ..Default::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.half_life_secs.is_finite() && self.half_life_secs > 0.0) {
            return Err(ProfileError::InvalidHalfLife(self.half_life_secs));
        }
        let bw = &self.behavior_weights;
        for (name, w) in [("browse", bw.browse), ("click", bw.click), ("purchase", bw.purchase), ("rating", bw.rating)]
        {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ProfileError::InvalidBehaviorWeight(name));
            }
        }
        Ok(())
    }
}

/// Forget function: `2^(-delta_t / half_life)`.
pub fn decay_weight(delta_t: f64, cfg: &DecayConfig) -> Result<f64, ProfileError> {
    if !(cfg.half_life_secs.is_finite() && cfg.half_life_secs > 0.0) {
        return Err(ProfileError::InvalidHalfLife(cfg.half_life_secs));
    }
    if delta_t.is_nan() || delta_t < 0.0 {
        return Err(ProfileError::NegativeDelta(delta_t));
    }
    Ok((-delta_t / cfg.half_life_secs).exp2())
}

pub fn behavior_weight(kind: Behavior, cfg: &DecayConfig) -> f64 {
    cfg.behavior_weights.get(kind)
}

/// Signed strength of one event: ratings map 1..5 onto -1..+1 around 3.
fn event_signal(kind: Behavior, cfg: &DecayConfig) -> f64 {
    let w = behavior_weight(kind, cfg);
    match kind {
        Behavior::Rating(v) => w * (v as f64 - 3.0) / 2.0,
        _ => w,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserInterestProfile {
    pub user_id: UserId,
    pub weights: FeatureVector,
    pub last_updated: Timestamp,
}

impl UserInterestProfile {
    pub fn new(user_id: UserId, created_at: Timestamp) -> Self {
        UserInterestProfile { user_id, weights: FeatureVector::new(), last_updated: created_at }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileUpdate {
    pub profile: UserInterestProfile,
    /// Events whose item is missing from the feature index.
    pub skipped: usize,
}

/// Ages `profile` to `now` and folds in `events`.
///
/// `new = old * decay(now - last_updated) + sum(signal(e) * decay(now - e.ts) * item(e))`,
/// floored at zero.
pub fn update_profile(
    profile: &UserInterestProfile,
    events: &[Interaction],
    index: &ItemFeatureIndex,
    now: Timestamp,
    cfg: &DecayConfig,
) -> Result<ProfileUpdate, ProfileError> {
    if now < profile.last_updated {
        return Err(ProfileError::ClockWentBackwards { last_updated: profile.last_updated, now });
    }
    let age = decay_weight((now - profile.last_updated) as f64, cfg)?;
    let mut acc: BTreeMap<FeatureId, f64> = profile.weights.iter().map(|(k, w)| (k, w * age)).collect();

    let mut skipped = 0;
    for e in events {
        if e.user_id != profile.user_id {
            return Err(ProfileError::ForeignEvent { expected: profile.user_id, found: e.user_id });
        }
        if e.timestamp > now {
            return Err(ProfileError::EventInFuture { timestamp: e.timestamp, now });
        }
        let Some(item) = index.vector(e.item_id) else {
            skipped += 1;
            continue;
        };
        let scale = event_signal(e.kind, cfg) * decay_weight((now - e.timestamp) as f64, cfg)?;
        if scale == 0.0 {
            continue;
        }
        for (k, w) in item.iter() {
            *acc.entry(k).or_insert(0.0) += scale * w;
        }
    }

    Ok(ProfileUpdate {
        profile: UserInterestProfile {
            user_id: profile.user_id,
            weights: FeatureVector::from_pairs(acc),
            last_updated: now,
        },
        skipped,
    })
}

/// Builds a fresh profile per user from `interactions`, all aged to `now`.
/// Events later than `now` are ignored.
pub fn build_profiles(
    interactions: &[Interaction],
    index: &ItemFeatureIndex,
    now: Timestamp,
    cfg: &DecayConfig,
) -> Result<BTreeMap<UserId, UserInterestProfile>, ProfileError> {
    let mut by_user: BTreeMap<UserId, Vec<Interaction>> = BTreeMap::new();
    for it in interactions.iter().filter(|it| it.timestamp <= now) {
        by_user.entry(it.user_id).or_default().push(*it);
    }
    by_user
        .into_iter()
        .map(|(user, events)| {
            let start = events.iter().map(|e| e.timestamp).min().unwrap_or(now);
            let update = update_profile(&UserInterestProfile::new(user, start), &events, index, now, cfg)?;
            Ok((user, update.profile))
        })
        .collect()
}

/// JSON shape of an exported profile; terms serialize in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileExport {
    pub user_id: UserId,
    pub last_updated: Timestamp,
    pub weights: BTreeMap<String, f64>,
}

impl ProfileExport {
    pub fn new(profile: &UserInterestProfile, index: &ItemFeatureIndex) -> Self {
        let weights = profile.weights.iter().filter_map(|(k, w)| index.term(k).map(|t| (t.to_string(), w))).collect();
        ProfileExport { user_id: profile.user_id, last_updated: profile.last_updated, weights }
    }
}

pub fn profile_to_json(profile: &UserInterestProfile, index: &ItemFeatureIndex) -> String {
    serde_json::to_string(&ProfileExport::new(profile, index)).expect("profile export serializes")
}
