//! Python bindings for the `dynrec` recommender.
//!
//! ```python
//! import dynrec
//! ds = dynrec.Dataset.synthetic(50, 80, 1000, seed=1)
//! rec = dynrec.Recommender(ds)
//! rec.recommend(1, algo="hybrid", n=5)      # [(item_id, score), ...]
//! report = dynrec.evaluate(ds, dynrec.Config().set("eval.folds", "3"))
//! print(report.to_csv())
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dynrec::algos::rules::{mine_rules as mine, RuleConfig};
use dynrec::eval::{self, emit_report, latency_csv, EvalReport, ReportFormat};
use dynrec::fusion::{fuse as fuse_lists, normalize_scores};
use dynrec::ingest::{self, Catalog, ItemMeta, ParseOptions, SynthConfig};
use dynrec::profile::DecayConfig;
use dynrec::{archive, Algorithm, Behavior, FusionWeights, Interaction, ItemId, RankedList, ScoredItem, UserId};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_algorithm(name: &str) -> PyResult<Algorithm> {
    name.parse().map_err(value_err)
}

fn parse_weights(weights: BTreeMap<String, f64>) -> PyResult<FusionWeights> {
    let map = weights.into_iter().map(|(k, v)| Ok((parse_algorithm(&k)?, v))).collect::<PyResult<_>>()?;
    FusionWeights::normalized(map).map_err(value_err)
}

/// `(antecedent, consequent, support, confidence)`.
type RuleTuple = (Vec<ItemId>, Vec<ItemId>, f64, f64);

fn pairs(items: &[ScoredItem]) -> Vec<(ItemId, f64)> {
    items.iter().map(|s| (s.item_id, s.score)).collect()
}

/// Engine configuration; every key of `Config.keys()` can be set.
#[pyclass(module = "dynrec", from_py_object)]
#[derive(Clone, Default)]
struct Config {
    inner: dynrec::Config,
}

#[pymethods]
impl Config {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Config { inner: dynrec::Config::from_toml_str(text).map_err(value_err)? })
    }

    /// `(key, default, description)` for every setting.
    #[staticmethod]
    fn keys() -> Vec<(&'static str, &'static str, &'static str)> {
        dynrec::config::KEYS.to_vec()
    }

    /// Sets one dotted key and returns self for chaining.
    fn set<'py>(mut slf: PyRefMut<'py, Self>, key: &str, value: &str) -> PyResult<PyRefMut<'py, Self>> {
        slf.inner.set(key, value).map_err(value_err)?;
        Ok(slf)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __repr__(&self) -> String {
        format!("Config(k={}, folds={}, seed={})", self.inner.eval.k, self.inner.eval.folds, self.inner.eval.seed)
    }
}

fn config_or_default(config: Option<&Config>) -> dynrec::Config {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Interactions plus item catalog.
#[pyclass(module = "dynrec", from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: dynrec::Dataset,
}

fn behavior_from(kind: &str, rating: Option<u8>) -> PyResult<Behavior> {
    match (kind, rating) {
        ("rating", Some(v)) => Behavior::rating(v).ok_or_else(|| value_err(format!("rating {v} outside 1-5"))),
        ("rating", None) => Err(value_err("rating interaction needs a value")),
        (other, _) => Behavior::from_token(other).ok_or_else(|| value_err(format!("unknown behavior {other:?}"))),
    }
}

#[pymethods]
impl Dataset {
    /// Builds a dataset from `(user_id, item_id, behavior, rating, timestamp)`
    /// tuples, where `rating` is only read for `behavior == "rating"`, and an
    /// optional `{item_id: [terms]}` catalog.
    #[new]
    #[pyo3(signature = (id, interactions, catalog=None))]
    fn new(
        id: String,
        interactions: Vec<(UserId, ItemId, String, Option<u8>, u64)>,
        catalog: Option<BTreeMap<ItemId, Vec<String>>>,
    ) -> PyResult<Self> {
        let interactions = interactions
            .into_iter()
            .map(|(user_id, item_id, kind, rating, timestamp)| {
                Ok(Interaction { user_id, item_id, kind: behavior_from(&kind, rating)?, timestamp })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let catalog: Catalog = catalog
            .unwrap_or_default()
            .into_iter()
            .map(|(item_id, terms)| (item_id, ItemMeta { item_id, title: String::new(), terms }))
            .collect();
        Ok(Dataset { inner: dynrec::Dataset::new(id, interactions, catalog).map_err(value_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n_users, n_items, n_events, seed=42))]
    fn synthetic(n_users: usize, n_items: usize, n_events: usize, seed: u64) -> PyResult<Self> {
        let inner =
            ingest::synthetic_dataset(n_users, n_items, n_events, seed, &SynthConfig::default()).map_err(value_err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (ratings, movies=None))]
    fn from_movielens(ratings: PathBuf, movies: Option<PathBuf>) -> PyResult<Self> {
        let opts = ParseOptions::default();
        let open = |p: &PathBuf| std::fs::File::open(p).map_err(|e| value_err(format!("{}: {e}", p.display())));
        let parsed = ingest::parse_movielens_ratings(open(&ratings)?, &opts).map_err(value_err)?;
        let catalog = match movies {
            Some(p) => ingest::parse_movielens_movies(open(&p)?, &opts).map_err(value_err)?.value,
            None => Catalog::new(),
        };
        Ok(Dataset { inner: dynrec::Dataset::new("movielens", parsed.value, catalog).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset { inner: archive::load(&path).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        archive::save(&self.inner, &path).map_err(value_err)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.stats.n_users
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.stats.n_items
    }

    fn __len__(&self) -> usize {
        self.inner.stats.n_interactions
    }

    fn users(&self) -> Vec<UserId> {
        self.inner.users().into_iter().collect()
    }

    /// `(user_id, item_id, behavior, rating, timestamp)` tuples.
    fn interactions(&self) -> Vec<(UserId, ItemId, &'static str, Option<u8>, u64)> {
        self.inner
            .interactions
            .iter()
            .map(|it| (it.user_id, it.item_id, it.kind.token(), it.kind.rating_value(), it.timestamp))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(id={:?}, {})", self.inner.id, self.inner.stats)
    }
}

/// Content, CF, and rule models fitted on a whole dataset.
#[pyclass(module = "dynrec")]
struct Recommender {
    models: dynrec::Models,
    weights: FusionWeights,
}

#[pymethods]
impl Recommender {
    /// Hybrid weights come from `fusion.weights` when set, otherwise from
    /// validation F1 on an inner split.
    #[new]
    #[pyo3(signature = (dataset, config=None))]
    fn new(py: Python<'_>, dataset: &Dataset, config: Option<&Config>) -> PyResult<Self> {
        let cfg = config_or_default(config);
        let ds = &dataset.inner;
        py.detach(|| {
            let models = dynrec::Models::fit(&ds.interactions, &ds.catalog, &cfg).map_err(|e| e.to_string())?;
            let weights = match cfg.fusion_weights() {
                Some(w) => w,
                None => eval::fit_fusion_weights(&ds.interactions, models.index.as_ref(), &cfg, cfg.eval.seed)
                    .map_err(|e| e.to_string())?,
            };
            Ok::<_, String>(Recommender { models, weights })
        })
        .map_err(value_err)
    }

    /// Top-`n` `(item_id, score)` pairs; `n` defaults to `eval.k`.
    #[pyo3(signature = (user, algo="hybrid", n=None))]
    fn recommend(&self, user: UserId, algo: &str, n: Option<usize>) -> PyResult<Vec<(ItemId, f64)>> {
        let alg = parse_algorithm(algo)?;
        if !self.models.knows_user(user) {
            return Err(PyKeyError::new_err(format!("unknown user {user}")));
        }
        let n = n.unwrap_or(self.models.config().eval.k);
        Ok(pairs(&self.models.recommend(alg, user, n, &self.weights)))
    }

    /// Hybrid weights in use, keyed by algorithm name.
    fn weights(&self) -> BTreeMap<&'static str, f64> {
        self.weights.iter().map(|(a, w)| (a.as_str(), w)).collect()
    }

    /// Mined rules as `(antecedent, consequent, support, confidence)`.
    fn rules(&self) -> Vec<RuleTuple> {
        self.models
            .rules
            .iter()
            .map(|r| (r.antecedent.clone(), r.consequent.clone(), r.support, r.confidence))
            .collect()
    }
}

/// Cross-validation results for every algorithm.
#[pyclass(module = "dynrec")]
struct Report {
    inner: EvalReport,
}

#[pymethods]
impl Report {
    /// One dict per algorithm with precision, recall, f1, and latency.
    #[getter]
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .rows
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("algorithm", r.algorithm.as_str())?;
                d.set_item("dataset", &r.dataset)?;
                d.set_item("precision", r.precision)?;
                d.set_item("recall", r.recall)?;
                d.set_item("f1", r.f1)?;
                d.set_item("n_users", r.n_users)?;
                d.set_item("mean_ms", r.latency.map(|l| l.mean_ms))?;
                d.set_item("p95_ms", r.latency.map(|l| l.p95_ms))?;
                Ok(d)
            })
            .collect()
    }

    fn to_csv(&self) -> String {
        String::from_utf8(emit_report(&self.inner, ReportFormat::Csv)).expect("utf-8")
    }

    fn to_json(&self) -> String {
        String::from_utf8(emit_report(&self.inner, ReportFormat::Json)).expect("utf-8")
    }

    fn latency_csv(&self) -> String {
        latency_csv(&self.inner)
    }
}

/// K-fold evaluation of content, cf, rules, and hybrid.
#[pyfunction]
#[pyo3(signature = (dataset, config=None, with_latency=false))]
fn evaluate(py: Python<'_>, dataset: &Dataset, config: Option<&Config>, with_latency: bool) -> PyResult<Report> {
    let cfg = config_or_default(config);
    let ds = &dataset.inner;
    let inner = py
        .detach(|| {
            let mut report = eval::run_experiment(ds, &cfg)?;
            if with_latency {
                eval::measure_report_latency(ds, &cfg, &mut report)?;
            }
            Ok::<_, eval::EvalError>(report)
        })
        .map_err(value_err)?;
    Ok(Report { inner })
}

#[pyfunction]
fn precision_recall_f1(recommended: Vec<ItemId>, relevant: BTreeSet<ItemId>) -> PyResult<(f64, f64, f64)> {
    let m = eval::precision_recall_f1(&recommended, &relevant).map_err(value_err)?;
    Ok((m.precision, m.recall, m.f1))
}

/// `(train, test)` index lists per fold.
#[pyfunction]
fn kfold_split(n: usize, k: usize, seed: u64) -> PyResult<Vec<(Vec<usize>, Vec<usize>)>> {
    let plan = eval::kfold_split(n, k, seed).map_err(value_err)?;
    Ok(plan.folds.into_iter().map(|f| (f.train, f.test)).collect())
}

/// Weight of evidence `delta_t` seconds old.
#[pyfunction]
#[pyo3(signature = (delta_t, half_life_days=30.0))]
fn decay_weight(delta_t: f64, half_life_days: f64) -> PyResult<f64> {
    let cfg = DecayConfig::with_half_life_days(half_life_days).map_err(value_err)?;
    dynrec::profile::decay_weight(delta_t, &cfg).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (transactions, min_support=0.01, min_confidence=0.3, max_len=3))]
fn mine_rules(
    transactions: Vec<Vec<ItemId>>,
    min_support: f64,
    min_confidence: f64,
    max_len: usize,
) -> PyResult<Vec<RuleTuple>> {
    let cfg = RuleConfig { min_support, min_confidence, max_len, ..RuleConfig::default() };
    let rules = mine(&transactions, &cfg).map_err(value_err)?;
    Ok(rules.into_iter().map(|r| (r.antecedent, r.consequent, r.support, r.confidence)).collect())
}

/// Min-max normalizes each `{algorithm: [(item_id, score)]}` list and fuses
/// them; returns `(item_id, score, contributors)` triples.
#[pyfunction]
fn fuse(
    lists: BTreeMap<String, Vec<(ItemId, f64)>>,
    weights: BTreeMap<String, f64>,
    n: usize,
) -> PyResult<Vec<(ItemId, f64, Vec<&'static str>)>> {
    let ranked = lists
        .into_iter()
        .map(|(alg, items)| {
            let items = items.into_iter().map(|(i, s)| ScoredItem::new(i, s)).collect();
            Ok(normalize_scores(&RankedList::new(parse_algorithm(&alg)?, items).map_err(value_err)?))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let fused = fuse_lists(&ranked, &parse_weights(weights)?, n).map_err(value_err)?;
    Ok(fused
        .items
        .into_iter()
        .map(|f| (f.item_id, f.score, f.contributors.iter().map(Algorithm::as_str).collect()))
        .collect())
}

#[pymodule]
#[pyo3(name = "dynrec")]
fn dynrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Recommender>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall_f1, m)?)?;
    m.add_function(wrap_pyfunction!(kfold_split, m)?)?;
    m.add_function(wrap_pyfunction!(decay_weight, m)?)?;
    m.add_function(wrap_pyfunction!(mine_rules, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
