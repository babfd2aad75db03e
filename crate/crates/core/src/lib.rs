//! Hybrid recommendation engine driven by dynamic user interest profiles.
//!
//! The pipeline runs in stages:
//!
//! 1. [`ingest`] parses MovieLens rating/catalog files and behavioral event
//!    logs into a [`Dataset`], or generates a seeded synthetic behavior log.
//! 2. [`profile`] turns the catalog into TF-IDF item vectors and folds
//!    user events into exponentially decayed interest profiles.
//! 3. [`algos`] holds the three base recommenders: content scoring,
//!    user-based collaborative filtering, and Apriori association rules.
//! 4. [`fusion`] normalizes and blends their ranked lists with weights
//!    proportional to validation F1.
//! 5. [`eval`] runs k-fold cross-validation and emits precision / recall /
//!    F1 / latency reports.

pub mod algos;
pub mod archive;
pub mod config;
pub mod engine;
pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod profile;

pub use algos::{AssociationRule, Neighborhood, RatingMatrix, ScoredItem};
pub use config::Config;
pub use engine::{Algorithm, Models};
pub use eval::{EvalReport, LatencyStats, Metrics, SplitPlan};
pub use fusion::{FusionWeights, RankedList};
pub use ingest::{Behavior, Dataset, DatasetStats, Interaction, ItemMeta};
pub use profile::{DecayConfig, FeatureVector, ItemFeatureIndex, UserInterestProfile};

/// Positive integer user identifier.
pub type UserId = u32;
/// Positive integer item identifier.
pub type ItemId = u32;
/// Seconds since the Unix epoch.
pub type Timestamp = u64;
