//! K-fold evaluation: precision / recall / F1 at top-K for every algorithm
//! plus the hybrid, and single-threaded latency sampling.
//!
//! For each fold the models are fitted on the training interactions. Hybrid
//! weights come from an inner train/validation split of that training set,
//! so test interactions never influence them. A test user is evaluated when
//! they have at least one relevant held-out item they had not already seen
//! in training.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algos::ScoredItem;
use crate::config::{Averaging, Config};
use crate::engine::{is_relevant, EngineError, Models};
use crate::fusion::{derive_weights, Algorithm, FusionWeights};
use crate::ingest::{Dataset, Interaction};
use crate::profile::{build_item_features, ItemFeatureIndex};
use crate::{ItemId, UserId};

pub const REPORT_CSV_HEADER: &str = "algorithm,dataset,precision,recall,f1,response_time_ms";
pub const LATENCY_CSV_HEADER: &str = "algorithm,dataset,mean_ms,p95_ms,n_calls";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k-fold split needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("cannot split {n} interactions into {k} folds")]
    TooFewInteractions { n: usize, k: usize },
    #[error("relevant set is empty; filter such users before scoring")]
    EmptyRelevant,
    #[error("recommendation list repeats item {0}")]
    DuplicateRecommendation(ItemId),
    #[error("latency measurement needs at least one request")]
    NoRequests,
    #[error("warmup ({warmup}) leaves no timed calls out of {requests} requests")]
    WarmupTooLarge { warmup: usize, requests: usize },
    #[error("no eligible test users: {0}")]
    NoEligibleUsers(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("bad report: {0}")]
    Report(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Seeded shuffle of `0..n`, cut into `k` contiguous folds whose sizes
/// differ by at most one. Index lists are stored ascending.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<SplitPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    if n < k {
        return Err(EvalError::TooFewInteractions { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut test = order[start..start + len].to_vec();
        test.sort_unstable();
        let mut in_test = vec![false; n];
        test.iter().for_each(|&i| in_test[i] = true);
        let train = (0..n).filter(|&i| !in_test[i]).collect();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(SplitPlan { seed, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Harmonic mean F1; 0 when both inputs are 0.
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Metrics { precision, recall, f1 }
    }
}

/// Precision, recall, and F1 of one recommendation list. An empty list
/// scores zero on all three.
pub fn precision_recall_f1(recommended: &[ItemId], relevant: &BTreeSet<ItemId>) -> Result<Metrics, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevant);
    }
    let mut distinct = BTreeSet::new();
    for &item in recommended {
        if !distinct.insert(item) {
            return Err(EvalError::DuplicateRecommendation(item));
        }
    }
    if recommended.is_empty() {
        return Ok(Metrics::from_pr(0.0, 0.0));
    }
    let hits = distinct.intersection(relevant).count() as f64;
    Ok(Metrics::from_pr(hits / recommended.len() as f64, hits / relevant.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub n_calls: usize,
}

impl LatencyStats {
    /// Mean and nearest-rank 95th percentile of the samples.
    pub fn from_samples(samples_ms: &[f64]) -> Option<Self> {
        if samples_ms.is_empty() {
            return None;
        }
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        Some(LatencyStats {
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p95_ms: sorted[rank - 1],
            n_calls: sorted.len(),
        })
    }
}

/// Anything that answers a top-K request for a user.
pub trait Recommender {
    fn recommend(&self, user: UserId) -> Vec<ScoredItem>;
}

impl<F: Fn(UserId) -> Vec<ScoredItem>> Recommender for F {
    fn recommend(&self, user: UserId) -> Vec<ScoredItem> {
        self(user)
    }
}

/// Times each request on the calling thread; the first `warmup` calls are
/// discarded.
pub fn measure_latency<R: Recommender + ?Sized>(
    recommender: &R,
    requests: &[UserId],
    warmup: usize,
) -> Result<LatencyStats, EvalError> {
    if requests.is_empty() {
        return Err(EvalError::NoRequests);
    }
    if warmup >= requests.len() {
        return Err(EvalError::WarmupTooLarge { warmup, requests: requests.len() });
    }
    let mut samples = Vec::with_capacity(requests.len() - warmup);
    for (i, &user) in requests.iter().enumerate() {
        let start = Instant::now();
        let out = recommender.recommend(user);
        let elapsed = start.elapsed();
        std::hint::black_box(out);
        if i >= warmup {
            samples.push(elapsed.as_secs_f64() * 1e3);
        }
    }
    Ok(LatencyStats::from_samples(&samples).expect("at least one timed call"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: Algorithm,
    pub dataset: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// (user, fold) pairs scored.
    pub n_users: usize,
    pub latency: Option<LatencyStats>,
}

impl ReportRow {
    pub fn metrics(&self) -> Metrics {
        Metrics { precision: self.precision, recall: self.recall, f1: self.f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub seed: u64,
    pub config: Config,
    /// Hybrid weights used in each fold.
    pub fusion_weights: Vec<FusionWeights>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, algorithm: Algorithm) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// CSV uses three decimals; JSON is the full report.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => {
            let mut out = format!("{REPORT_CSV_HEADER}\n");
            for r in &report.rows {
                let time = r.latency.map(|l| format!("{:.3}", l.mean_ms)).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{:.3},{:.3},{:.3},{}",
                    r.algorithm, r.dataset, r.precision, r.recall, r.f1, time
                );
            }
            out.into_bytes()
        }
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
    }
}

pub fn parse_report_json(bytes: &[u8]) -> Result<EvalReport, EvalError> {
    serde_json::from_slice(bytes).map_err(|e| EvalError::Report(e.to_string()))
}

/// CSV `algorithm,dataset,mean_ms,p95_ms,n_calls` for rows with latency.
pub fn latency_csv(report: &EvalReport) -> String {
    let mut out = format!("{LATENCY_CSV_HEADER}\n");
    for r in &report.rows {
        if let Some(l) = r.latency {
            let _ = writeln!(out, "{},{},{:.3},{:.3},{}", r.algorithm, r.dataset, l.mean_ms, l.p95_ms, l.n_calls);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
struct UserOutcome {
    precision: f64,
    recall: f64,
    hits: usize,
    n_rec: usize,
    n_rel: usize,
}

fn score_user(recs: &[ScoredItem], relevant: &BTreeSet<ItemId>) -> UserOutcome {
    let ids: Vec<ItemId> = recs.iter().map(|s| s.item_id).collect();
    let m = precision_recall_f1(&ids, relevant).expect("relevant nonempty and lists duplicate-free");
    let hits = ids.iter().filter(|i| relevant.contains(i)).count();
    UserOutcome { precision: m.precision, recall: m.recall, hits, n_rec: ids.len(), n_rel: relevant.len() }
}

fn aggregate(outcomes: &[UserOutcome], averaging: Averaging) -> (f64, f64) {
    let n = outcomes.len() as f64;
    match averaging {
        Averaging::Macro => {
            (outcomes.iter().map(|o| o.precision).sum::<f64>() / n, outcomes.iter().map(|o| o.recall).sum::<f64>() / n)
        }
        Averaging::Micro => {
            let hits: usize = outcomes.iter().map(|o| o.hits).sum();
            let rec: usize = outcomes.iter().map(|o| o.n_rec).sum();
            let rel: usize = outcomes.iter().map(|o| o.n_rel).sum();
            let p = if rec == 0 { 0.0 } else { hits as f64 / rec as f64 };
            (p, hits as f64 / rel as f64)
        }
    }
}

/// Relevant unseen held-out items per test user, ascending by user.
pub fn eligible_users(test: &[Interaction], models: &Models, threshold: u8) -> BTreeMap<UserId, BTreeSet<ItemId>> {
    let mut out: BTreeMap<UserId, BTreeSet<ItemId>> = BTreeMap::new();
    for it in test.iter().filter(|it| is_relevant(it.kind, threshold)) {
        if models.seen.get(&it.user_id).is_some_and(|s| s.contains(&it.item_id)) {
            continue;
        }
        out.entry(it.user_id).or_default().insert(it.item_id);
    }
    out
}

/// Scores every target user with each algorithm, in parallel; results come
/// back in ascending user order.
fn score_targets(
    models: &Models,
    targets: &BTreeMap<UserId, BTreeSet<ItemId>>,
    algorithms: &[Algorithm],
    weights: &FusionWeights,
    k: usize,
) -> Vec<Vec<UserOutcome>> {
    let targets: Vec<(&UserId, &BTreeSet<ItemId>)> = targets.iter().collect();
    let per_user: Vec<Vec<UserOutcome>> = targets
        .par_iter()
        .map(|(u, rel)| algorithms.iter().map(|&a| score_user(&models.recommend(a, **u, k, weights), rel)).collect())
        .collect();
    (0..algorithms.len()).map(|a| per_user.iter().map(|row| row[a]).collect()).collect()
}

fn pick(interactions: &[Interaction], idx: &[usize]) -> Vec<Interaction> {
    idx.iter().map(|&i| interactions[i]).collect()
}

/// Derives hybrid weights from validation F1 on an inner split of `train`.
/// Falls back to uniform weights when the split has no eligible users.
pub fn fit_fusion_weights(
    train: &[Interaction],
    index: Option<&ItemFeatureIndex>,
    cfg: &Config,
    seed: u64,
) -> Result<FusionWeights, EvalError> {
    let inner_folds = ((1.0 / cfg.eval.validation_fraction).round() as usize).max(2);
    if train.len() < inner_folds {
        return Ok(FusionWeights::uniform());
    }
    let plan = kfold_split(train.len(), inner_folds, seed)?;
    let fold = &plan.folds[0];
    let models = Models::fit_with_index(&pick(train, &fold.train), index.cloned(), cfg)?;
    let targets = eligible_users(&pick(train, &fold.test), &models, cfg.eval.relevance_threshold);
    if targets.is_empty() {
        return Ok(FusionWeights::uniform());
    }
    let outcomes = score_targets(&models, &targets, &Algorithm::BASE, &FusionWeights::uniform(), cfg.eval.k);
    let f1s = Algorithm::BASE
        .iter()
        .zip(&outcomes)
        .map(|(a, o)| {
            let (p, r) = aggregate(o, cfg.eval.averaging);
            (*a, Metrics::from_pr(p, r).f1)
        })
        .collect();
    Ok(derive_weights(&f1s))
}

fn inner_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64 + 1)
}

fn feature_index(dataset: &Dataset) -> Result<Option<ItemFeatureIndex>, EvalError> {
    if dataset.catalog.is_empty() {
        return Ok(None);
    }
    Ok(Some(build_item_features(&dataset.catalog).map_err(EngineError::from)?))
}

/// Cross-validated metrics for content, cf, rules, and hybrid. A pure
/// function of the dataset and config.
pub fn run_experiment(dataset: &Dataset, cfg: &Config) -> Result<EvalReport, EvalError> {
    let plan = kfold_split(dataset.interactions.len(), cfg.eval.folds, cfg.eval.seed)?;
    let index = feature_index(dataset)?;

    let mut fold_scores: BTreeMap<Algorithm, Vec<(f64, f64)>> = BTreeMap::new();
    let mut users_scored = 0;
    let mut fusion_weights = Vec::with_capacity(plan.folds.len());
    for (f, fold) in plan.folds.iter().enumerate() {
        let train = pick(&dataset.interactions, &fold.train);
        let test = pick(&dataset.interactions, &fold.test);
        let weights = match cfg.fusion_weights() {
            Some(w) => w,
            None => fit_fusion_weights(&train, index.as_ref(), cfg, inner_seed(cfg.eval.seed, f))?,
        };
        fusion_weights.push(weights.clone());
        let models = Models::fit_with_index(&train, index.clone(), cfg)?;
        let targets = eligible_users(&test, &models, cfg.eval.relevance_threshold);
        if targets.is_empty() {
            continue;
        }
        users_scored += targets.len();
        let outcomes = score_targets(&models, &targets, &Algorithm::ALL, &weights, cfg.eval.k);
        for (a, o) in Algorithm::ALL.iter().zip(&outcomes) {
            fold_scores.entry(*a).or_default().push(aggregate(o, cfg.eval.averaging));
        }
    }

    if users_scored == 0 {
        return Err(EvalError::NoEligibleUsers(format!(
            "{} interactions over {} folds, none of the held-out events is relevant \
             (rating >= {} or purchase) and unseen in training",
            dataset.interactions.len(),
            cfg.eval.folds,
            cfg.eval.relevance_threshold
        )));
    }

    let rows = Algorithm::ALL
        .iter()
        .map(|a| {
            let folds = &fold_scores[a];
            let n = folds.len() as f64;
            let p = folds.iter().map(|x| x.0).sum::<f64>() / n;
            let r = folds.iter().map(|x| x.1).sum::<f64>() / n;
            let m = Metrics::from_pr(p, r);
            ReportRow {
                algorithm: *a,
                dataset: dataset.id.clone(),
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                n_users: users_scored,
                latency: None,
            }
        })
        .collect();
    Ok(EvalReport { dataset: dataset.id.clone(), seed: cfg.eval.seed, config: cfg.clone(), fusion_weights, rows })
}

/// Fills each row's latency by timing top-K calls against the first fold's
/// models, one request at a time.
pub fn measure_report_latency(dataset: &Dataset, cfg: &Config, report: &mut EvalReport) -> Result<(), EvalError> {
    let plan = kfold_split(dataset.interactions.len(), cfg.eval.folds, cfg.eval.seed)?;
    let fold = &plan.folds[0];
    let models = Models::fit_with_index(&pick(&dataset.interactions, &fold.train), feature_index(dataset)?, cfg)?;
    let targets = eligible_users(&pick(&dataset.interactions, &fold.test), &models, cfg.eval.relevance_threshold);
    let mut users: Vec<UserId> = targets.into_keys().collect();
    if users.is_empty() {
        users = models.seen.keys().copied().collect();
    }
    if users.is_empty() {
        return Err(EvalError::NoRequests);
    }
    let warmup = cfg.eval.latency_warmup;
    let requests: Vec<UserId> = users.iter().copied().cycle().take(warmup + cfg.eval.latency_requests).collect();
    let weights = report.fusion_weights.first().cloned().unwrap_or_else(FusionWeights::uniform);
    for row in &mut report.rows {
        let alg = row.algorithm;
        let rec = |u: UserId| models.recommend(alg, u, cfg.eval.k, &weights);
        row.latency = Some(measure_latency(&rec, &requests, warmup)?);
    }
    Ok(())
}
