//! Pipeline configuration, loadable from TOML and overridable key by key.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algos::{CfConfig, RuleConfig};
use crate::fusion::{Algorithm, FusionWeights};
use crate::profile::{BehaviorWeights, DecayConfig, SECONDS_PER_DAY};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {reason}")]
    Value { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecaySection {
    pub half_life_days: f64,
    pub browse: f64,
    pub click: f64,
    pub purchase: f64,
    pub rating: f64,
}

impl Default for DecaySection {
    fn default() -> Self {
        let bw = BehaviorWeights::default();
        DecaySection {
            half_life_days: 30.0,
            browse: bw.browse,
            click: bw.click,
            purchase: bw.purchase,
            rating: bw.rating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    /// Explicit static weights; derived from validation F1 when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<Algorithm, f64>>,
    /// Depth of each base list fed into fusion.
    pub candidates: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection { weights: None, candidates: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Per-user metrics averaged over users, then over folds.
    #[default]
    Macro,
    /// Hits pooled over all users of a fold, then averaged over folds.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    pub folds: usize,
    pub seed: u64,
    pub relevance_threshold: u8,
    pub averaging: Averaging,
    /// Share of each training fold held out to fit hybrid weights.
    pub validation_fraction: f64,
    /// Users sampled for latency measurement.
    pub latency_requests: usize,
    pub latency_warmup: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 10,
            folds: 5,
            seed: 42,
            relevance_threshold: 4,
            averaging: Averaging::Macro,
            validation_fraction: 0.2,
            latency_requests: 200,
            latency_warmup: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub decay: DecaySection,
    pub cf: CfConfig,
    pub rules: RuleConfig,
    pub fusion: FusionSection,
    pub eval: EvalSection,
}

/// Every settable key with its default and a short description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("decay.half_life_days", "30", "half-life of the interest forget function, days"),
    ("decay.browse", "0.2", "profile weight of a browse event"),
    ("decay.click", "0.5", "profile weight of a click event"),
    ("decay.purchase", "1.0", "profile weight of a purchase event"),
    ("decay.rating", "1.0", "profile weight of a rating, scaled by (value-3)/2"),
    ("cf.k_neighbors", "40", "neighborhood size"),
    ("cf.min_overlap", "2", "co-rated items needed for a nonzero similarity"),
    ("cf.sim", "pearson", "user similarity: pearson | cosine"),
    ("cf.similarity_floor", "0.0", "minimum |similarity| of a neighbor"),
    ("rules.min_support", "0.01", "Apriori minimum support, (0,1]"),
    ("rules.min_confidence", "0.3", "minimum rule confidence, (0,1]"),
    ("rules.max_len", "3", "largest itemset mined"),
    ("rules.max_consequent_len", "1", "largest rule consequent"),
    ("fusion.weights", "derived", "static weights, e.g. content:0.3,cf:0.5,rules:0.2"),
    ("fusion.candidates", "50", "depth of each base list fed to fusion"),
    ("eval.k", "10", "recommendations per user"),
    ("eval.folds", "5", "cross-validation folds (>= 2)"),
    ("eval.seed", "42", "seed for splits"),
    ("eval.relevance_threshold", "4", "rating counted as relevant (purchases always are)"),
    ("eval.averaging", "macro", "macro | micro"),
    ("eval.validation_fraction", "0.2", "inner split used to derive hybrid weights"),
    ("eval.latency_requests", "200", "users timed per algorithm"),
    ("eval.latency_warmup", "10", "untimed warmup calls"),
];

/// Help text listing every key and default.
pub fn keys_help() -> String {
    let mut out = String::from("Config keys (set in --config TOML or with --set key=value):\n");
    for (key, default, doc) in KEYS {
        out.push_str(&format!("  {key:<28} default {default:<9} {doc}\n"));
    }
    out
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides one dotted key, e.g. `cf.k_neighbors = 20`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let bad = |reason: String| ConfigError::Value { key: key.to_string(), reason };
        let (section, field) = key.split_once('.').expect("keys are dotted");
        let parsed = if key == "fusion.weights" {
            parse_weights(value).map_err(bad)?
        } else {
            toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()))
        };
        let mut tree = toml::Value::try_from(&*self).expect("config serializes");
        let table = tree
            .as_table_mut()
            .and_then(|t| t.get_mut(section))
            .and_then(toml::Value::as_table_mut)
            .expect("section exists");
        table.insert(field.to_string(), parsed);
        let updated: Config = tree.try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| ConfigError::Value { key: key.into(), reason: reason.into() };
        self.decay_config().validate().map_err(|e| bad("decay", &e.to_string()))?;
        if self.cf.k_neighbors == 0 {
            return Err(bad("cf.k_neighbors", "must be at least 1"));
        }
        if self.cf.min_overlap == 0 {
            return Err(bad("cf.min_overlap", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.cf.similarity_floor) {
            return Err(bad("cf.similarity_floor", "must be in [0,1]"));
        }
        self.rules.validate().map_err(|e| bad("rules", &e.to_string()))?;
        if let Some(w) = &self.fusion.weights {
            FusionWeights::normalized(w.clone()).map_err(|e| bad("fusion.weights", &e.to_string()))?;
        }
        if self.fusion.candidates == 0 {
            return Err(bad("fusion.candidates", "must be at least 1"));
        }
        if self.eval.k == 0 {
            return Err(bad("eval.k", "must be at least 1"));
        }
        if !(1..=5).contains(&self.eval.relevance_threshold) {
            return Err(bad("eval.relevance_threshold", "must be in 1-5"));
        }
        if !(self.eval.validation_fraction > 0.0 && self.eval.validation_fraction < 1.0) {
            return Err(bad("eval.validation_fraction", "must be in (0,1)"));
        }
        if self.eval.latency_requests == 0 {
            return Err(bad("eval.latency_requests", "must be at least 1"));
        }
        Ok(())
    }

    pub fn decay_config(&self) -> DecayConfig {
        DecayConfig {
            half_life_secs: self.decay.half_life_days * SECONDS_PER_DAY,
            behavior_weights: BehaviorWeights {
                browse: self.decay.browse,
                click: self.decay.click,
                purchase: self.decay.purchase,
                rating: self.decay.rating,
            },
        }
    }

    /// Explicit fusion weights, normalized, if configured.
    pub fn fusion_weights(&self) -> Option<FusionWeights> {
        self.fusion.weights.clone().and_then(|w| FusionWeights::normalized(w).ok())
    }
}

fn parse_weights(value: &str) -> Result<toml::Value, String> {
    let mut table = toml::Table::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (alg, w) = part.split_once(':').ok_or_else(|| format!("expected algo:weight, got {part:?}"))?;
        let alg: Algorithm = alg.trim().parse().map_err(|e: crate::fusion::FusionError| e.to_string())?;
        let w: f64 = w.trim().parse().map_err(|_| format!("bad weight {w:?}"))?;
        table.insert(alg.as_str().to_string(), toml::Value::Float(w));
    }
    Ok(toml::Value::Table(table))
}
