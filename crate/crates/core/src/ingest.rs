//! Parsing of MovieLens `::` files and behavioral CSV event logs, plus a
//! seeded synthetic behavior generator.
//!
//! Parsers are lenient per line and strict per file: a malformed line is
//! recorded in a [`RejectReport`] and skipped, but the whole parse fails once
//! the share of rejected lines exceeds [`ParseOptions::max_reject_rate`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::Read;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{ItemId, Timestamp, UserId};

/// Header line required at the top of a behavioral event log.
pub const EVENT_LOG_HEADER: &str = "user_id,item_id,behavior,timestamp";

/// Kind of user-item event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    /// Explicit 1-5 star rating.
    Rating(u8),
    Browse,
    Click,
    Purchase,
}

impl Behavior {
    pub fn rating(value: u8) -> Option<Self> {
        (1..=5).contains(&value).then_some(Behavior::Rating(value))
    }

    /// Parses an event-log behavior token.
    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "browse" => Some(Behavior::Browse),
            "click" => Some(Behavior::Click),
            "purchase" => Some(Behavior::Purchase),
            _ => None,
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            Behavior::Rating(_) => "rating",
            Behavior::Browse => "browse",
            Behavior::Click => "click",
            Behavior::Purchase => "purchase",
        }
    }

    pub fn rating_value(&self) -> Option<u8> {
        match self {
            Behavior::Rating(v) => Some(*v),
            _ => None,
        }
    }
}

/// One user-item event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub kind: Behavior,
    pub timestamp: Timestamp,
}

impl Interaction {
    pub fn rating(user_id: UserId, item_id: ItemId, value: u8, timestamp: Timestamp) -> Self {
        Interaction { user_id, item_id, kind: Behavior::Rating(value), timestamp }
    }

    pub fn event(user_id: UserId, item_id: ItemId, kind: Behavior, timestamp: Timestamp) -> Self {
        Interaction { user_id, item_id, kind, timestamp }
    }

    /// Checks the type invariants: positive ids and ratings within 1-5.
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.user_id == 0 {
            return Err("user_id must be positive");
        }
        if self.item_id == 0 {
            return Err("item_id must be positive");
        }
        if let Behavior::Rating(v) = self.kind {
            if !(1..=5).contains(&v) {
                return Err("rating outside 1-5");
            }
        }
        Ok(())
    }
}

/// Catalog entry; `terms` are the item's feature tokens (genres for MovieLens).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: ItemId,
    pub title: String,
    pub terms: Vec<String>,
}

pub type Catalog = BTreeMap<ItemId, ItemMeta>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "users={} items={} interactions={}", self.n_users, self.n_items, self.n_interactions)
    }
}

/// Validated in-memory dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Short label used in reports, e.g. `movielens`.
    pub id: String,
    pub interactions: Vec<Interaction>,
    pub catalog: Catalog,
    /// Set when some interaction references an item missing from `catalog`.
    pub catalog_incomplete: bool,
    pub stats: DatasetStats,
}

impl Dataset {
    pub fn new(id: impl Into<String>, interactions: Vec<Interaction>, catalog: Catalog) -> Result<Self, IngestError> {
        for (idx, it) in interactions.iter().enumerate() {
            it.validate().map_err(|reason| IngestError::InvalidInteraction { index: idx, reason })?;
        }
        let catalog_incomplete = interactions.iter().any(|it| !catalog.contains_key(&it.item_id));
        let stats = dataset_stats(&interactions);
        Ok(Dataset { id: id.into(), interactions, catalog, catalog_incomplete, stats })
    }

    /// Re-checks every invariant; used after loading an archive.
    pub fn validate(&self) -> Result<(), IngestError> {
        for (idx, it) in self.interactions.iter().enumerate() {
            it.validate().map_err(|reason| IngestError::InvalidInteraction { index: idx, reason })?;
        }
        for (id, meta) in &self.catalog {
            if *id != meta.item_id {
                return Err(IngestError::Inconsistent(format!("catalog key {id} holds item {}", meta.item_id)));
            }
        }
        let incomplete = self.interactions.iter().any(|it| !self.catalog.contains_key(&it.item_id));
        if incomplete != self.catalog_incomplete {
            return Err(IngestError::Inconsistent("catalog-incomplete flag is stale".into()));
        }
        if dataset_stats(&self.interactions) != self.stats {
            return Err(IngestError::Inconsistent("stored stats differ from recomputed".into()));
        }
        Ok(())
    }

    pub fn users(&self) -> BTreeSet<UserId> {
        self.interactions.iter().map(|it| it.user_id).collect()
    }

    pub fn has_user(&self, user: UserId) -> bool {
        self.interactions.iter().any(|it| it.user_id == user)
    }
}

/// Distinct users, distinct items, and interaction count.
pub fn dataset_stats(interactions: &[Interaction]) -> DatasetStats {
    let users: BTreeSet<_> = interactions.iter().map(|it| it.user_id).collect();
    let items: BTreeSet<_> = interactions.iter().map(|it| it.item_id).collect();
    DatasetStats { n_users: users.len(), n_items: items.len(), n_interactions: interactions.len() }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{rejected} of {total} lines rejected, above the {:.2}% limit", max_rate * 100.0)]
    TooManyRejects { rejected: usize, total: usize, max_rate: f64, report: RejectReport },
    #[error("missing event log header `{EVENT_LOG_HEADER}` (found {found:?})")]
    MissingHeader { found: String },
    #[error("n_events ({n_events}) is smaller than n_users ({n_users}); every user needs an event")]
    TooFewEvents { n_events: usize, n_users: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("interaction #{index} is invalid: {reason}")]
    InvalidInteraction { index: usize, reason: &'static str },
    #[error("event log cannot hold a rating interaction (#{index})")]
    NotAnEvent { index: usize },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParseOptions {
    /// Fraction of non-blank lines that may be rejected before the parse fails.
    pub max_reject_rate: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { max_reject_rate: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    /// 1-based line number in the source.
    pub line: usize,
    pub reason: String,
}

/// Per-parse record of rejected lines and non-fatal warnings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectReport {
    pub total_lines: usize,
    pub rejects: Vec<LineIssue>,
    pub warnings: Vec<LineIssue>,
}

impl RejectReport {
    fn reject(&mut self, line: usize, reason: impl Into<String>) {
        self.rejects.push(LineIssue { line, reason: reason.into() });
    }

    /// Rejects as CSV `line_number,reason`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("line_number,reason\n");
        for r in &self.rejects {
            let _ = writeln!(out, "{},{}", r.line, csv_field(&r.reason));
        }
        out
    }

    fn check(self, opts: &ParseOptions) -> Result<Self, IngestError> {
        let rejected = self.rejects.len();
        if rejected as f64 > opts.max_reject_rate * self.total_lines as f64 {
            return Err(IngestError::TooManyRejects {
                rejected,
                total: self.total_lines,
                max_rate: opts.max_reject_rate,
                report: self,
            });
        }
        Ok(self)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Parse result together with its reject report.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub report: RejectReport,
}

/// Splits on LF, strips an optional trailing CR, and yields non-blank lines
/// with their 1-based numbers.
fn lines(buf: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    buf.split(|b| *b == b'\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix(b"\r").unwrap_or(l)))
        .filter(|(_, l)| !l.iter().all(u8::is_ascii_whitespace))
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
    s.trim().parse::<T>().map_err(|_| format!("non-integer {name} {:?}", s.trim()))
}

/// Parses MovieLens `ratings.dat`: `UserID::MovieID::Rating::Timestamp`.
pub fn parse_movielens_ratings<R: Read>(
    mut source: R,
    opts: &ParseOptions,
) -> Result<Parsed<Vec<Interaction>>, IngestError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut report = RejectReport::default();
    let mut out = Vec::new();
    for (n, raw) in lines(&buf) {
        report.total_lines += 1;
        match parse_rating_line(raw) {
            Ok(it) => out.push(it),
            Err(reason) => report.reject(n, reason),
        }
    }
    let report = report.check(opts)?;
    Ok(Parsed { value: out, report })
}

fn parse_rating_line(raw: &[u8]) -> Result<Interaction, String> {
    let line = std::str::from_utf8(raw).map_err(|_| "invalid utf-8".to_string())?;
    let fields: Vec<&str> = line.split("::").collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let user_id: UserId = parse_field(fields[0], "user_id")?;
    let item_id: ItemId = parse_field(fields[1], "item_id")?;
    let rating: u8 = parse_field(fields[2], "rating")?;
    let timestamp: Timestamp = parse_field(fields[3], "timestamp")?;
    let kind = Behavior::rating(rating).ok_or_else(|| format!("rating {rating} outside 1-5"))?;
    let it = Interaction { user_id, item_id, kind, timestamp };
    it.validate().map_err(str::to_string)?;
    Ok(it)
}

/// Parses MovieLens `movies.dat`: `MovieID::Title::Genre1|Genre2|...`.
///
/// The public MovieLens 1M catalog is Latin-1 encoded, so lines that are not
/// valid UTF-8 are decoded as Latin-1. Duplicate ids keep the last entry and
/// add a warning.
pub fn parse_movielens_movies<R: Read>(mut source: R, opts: &ParseOptions) -> Result<Parsed<Catalog>, IngestError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut report = RejectReport::default();
    let mut catalog = Catalog::new();
    for (n, raw) in lines(&buf) {
        report.total_lines += 1;
        let line = match std::str::from_utf8(raw) {
            Ok(s) => s.to_string(),
            Err(_) => raw.iter().map(|&b| b as char).collect(),
        };
        match parse_movie_line(&line) {
            Ok(meta) => {
                if catalog.insert(meta.item_id, meta.clone()).is_some() {
                    report.warnings.push(LineIssue {
                        line: n,
                        reason: format!("duplicate item_id {}; last occurrence wins", meta.item_id),
                    });
                }
            }
            Err(reason) => report.reject(n, reason),
        }
    }
    let report = report.check(opts)?;
    Ok(Parsed { value: catalog, report })
}

fn parse_movie_line(line: &str) -> Result<ItemMeta, String> {
    let (id, rest) = line.split_once("::").ok_or("expected 3 fields")?;
    let (title, genres) = rest.rsplit_once("::").ok_or("expected 3 fields")?;
    let item_id: ItemId = parse_field(id, "item_id")?;
    if item_id == 0 {
        return Err("item_id must be positive".into());
    }
    let terms = genres.split('|').map(|g| g.trim().to_lowercase()).filter(|g| !g.is_empty()).collect();
    Ok(ItemMeta { item_id, title: title.to_string(), terms })
}

/// Parses a CSV event log with header `user_id,item_id,behavior,timestamp`.
/// LF and CRLF line endings are both accepted.
pub fn parse_event_log<R: Read>(source: R, opts: &ParseOptions) -> Result<Parsed<Vec<Interaction>>, IngestError> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(source);
    let mut records = reader.byte_records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(csv_io(e)),
        None => return Err(IngestError::MissingHeader { found: String::new() }),
    };
    let header_text: Vec<String> =
        header.iter().map(|f| String::from_utf8_lossy(f).trim_start_matches('\u{feff}').to_string()).collect();
    if header_text.join(",") != EVENT_LOG_HEADER {
        return Err(IngestError::MissingHeader { found: header_text.join(",") });
    }

    let mut report = RejectReport::default();
    let mut out = Vec::new();
    for rec in records {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(csv_io(e));
                }
                report.total_lines += 1;
                report.reject(line, e.to_string());
                continue;
            }
        };
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        report.total_lines += 1;
        match parse_event_record(&rec) {
            Ok(it) => out.push(it),
            Err(reason) => report.reject(line, reason),
        }
    }
    let report = report.check(opts)?;
    Ok(Parsed { value: out, report })
}

fn csv_io(e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        other => IngestError::InvalidArgument(format!("{other:?}")),
    }
}

fn parse_event_record(rec: &csv::ByteRecord) -> Result<Interaction, String> {
    if rec.len() != 4 {
        return Err(format!("expected 4 fields, found {}", rec.len()));
    }
    let field = |i: usize| std::str::from_utf8(&rec[i]).map_err(|_| "invalid utf-8".to_string());
    let user_id: UserId = parse_field(field(0)?, "user_id")?;
    let item_id: ItemId = parse_field(field(1)?, "item_id")?;
    let token = field(2)?;
    let kind = Behavior::from_token(token).ok_or_else(|| format!("unknown behavior {token:?}"))?;
    let timestamp: Timestamp = parse_field(field(3)?, "timestamp")?;
    let it = Interaction { user_id, item_id, kind, timestamp };
    it.validate().map_err(str::to_string)?;
    Ok(it)
}

/// Serializes rating interactions back to `ratings.dat` lines. Non-rating
/// interactions are skipped.
pub fn write_movielens_ratings(interactions: &[Interaction]) -> String {
    let mut out = String::new();
    for it in interactions {
        if let Behavior::Rating(v) = it.kind {
            let _ = writeln!(out, "{}::{}::{}::{}", it.user_id, it.item_id, v, it.timestamp);
        }
    }
    out
}

pub fn write_movielens_movies(catalog: &Catalog) -> String {
    let mut out = String::new();
    for meta in catalog.values() {
        let _ = writeln!(out, "{}::{}::{}", meta.item_id, meta.title, meta.terms.join("|"));
    }
    out
}

/// Serializes behavioral events as a CSV event log, header included.
pub fn write_event_log(interactions: &[Interaction]) -> Result<String, IngestError> {
    let mut out = format!("{EVENT_LOG_HEADER}\n");
    for (index, it) in interactions.iter().enumerate() {
        if matches!(it.kind, Behavior::Rating(_)) {
            return Err(IngestError::NotAnEvent { index });
        }
        let _ = writeln!(out, "{},{},{},{}", it.user_id, it.item_id, it.kind.token(), it.timestamp);
    }
    Ok(out)
}

/// Knobs for the synthetic behavior generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Relative frequencies of browse / click / purchase.
    pub behavior_mix: [f64; 3],
    /// Number of interest clusters the item space is split into.
    pub n_clusters: usize,
    /// Probability that an event targets the user's current cluster.
    pub focus: f64,
    pub start_ts: Timestamp,
    pub span_secs: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            behavior_mix: [0.7, 0.2, 0.1],
            n_clusters: 8,
            focus: 0.85,
            start_ts: 1_700_000_000,
            span_secs: 180 * 86_400,
        }
    }
}

/// Seeded synthetic behavior log with default [`SynthConfig`].
pub fn generate_synthetic_events(
    n_users: usize,
    n_items: usize,
    n_events: usize,
    seed: u64,
) -> Result<Vec<Interaction>, IngestError> {
    generate_synthetic_events_with(n_users, n_items, n_events, seed, &SynthConfig::default())
}

/// Each user starts in one interest cluster and switches to another at a
/// random point in the middle of the time span. Events land in the current
/// cluster with probability `cfg.focus`, otherwise on a uniformly random item.
/// Output is sorted by (timestamp, user_id, item_id).
pub fn generate_synthetic_events_with(
    n_users: usize,
    n_items: usize,
    n_events: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Vec<Interaction>, IngestError> {
    if n_users == 0 || n_items == 0 || n_events == 0 {
        return Err(IngestError::InvalidArgument("all counts must be positive".into()));
    }
    if n_events < n_users {
        return Err(IngestError::TooFewEvents { n_events, n_users });
    }
    if n_users > UserId::MAX as usize || n_items > ItemId::MAX as usize {
        return Err(IngestError::InvalidArgument("id space overflow".into()));
    }
    let mix_total: f64 = cfg.behavior_mix.iter().sum();
    if cfg.behavior_mix.iter().any(|w| !w.is_finite() || *w < 0.0) || mix_total <= 0.0 {
        return Err(IngestError::InvalidArgument("behavior mix must be nonnegative".into()));
    }
    if !(0.0..=1.0).contains(&cfg.focus) || cfg.span_secs == 0 {
        return Err(IngestError::InvalidArgument("focus must be in [0,1], span positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_clusters = cfg.n_clusters.clamp(1, n_items);
    let clusters: Vec<Vec<ItemId>> =
        (0..n_clusters).map(|c| ((c + 1)..=n_items).step_by(n_clusters).map(|i| i as ItemId).collect()).collect();

    let mut counts = vec![1usize; n_users];
    for _ in n_users..n_events {
        counts[rng.random_range(0..n_users)] += 1;
    }

    let mut events = Vec::with_capacity(n_events);
    for (u, &count) in counts.iter().enumerate() {
        let user_id = (u + 1) as UserId;
        let before = rng.random_range(0..n_clusters);
        let after = if n_clusters > 1 { (before + rng.random_range(1..n_clusters)) % n_clusters } else { before };
        let switch_at = cfg.start_ts + (cfg.span_secs as f64 * rng.random_range(0.3..0.7)) as u64;
        for _ in 0..count {
            let timestamp = cfg.start_ts + rng.random_range(0..cfg.span_secs);
            let cluster = if timestamp < switch_at { before } else { after };
            let item_id = if rng.random_bool(cfg.focus) {
                *clusters[cluster].choose(&mut rng).expect("clusters are nonempty")
            } else {
                rng.random_range(1..=n_items) as ItemId
            };
            let draw = rng.random_range(0.0..mix_total);
            let kind = if draw < cfg.behavior_mix[0] {
                Behavior::Browse
            } else if draw < cfg.behavior_mix[0] + cfg.behavior_mix[1] {
                Behavior::Click
            } else {
                Behavior::Purchase
            };
            events.push(Interaction { user_id, item_id, kind, timestamp });
        }
    }
    events.sort_by_key(|it| (it.timestamp, it.user_id, it.item_id));
    Ok(events)
}

/// Catalog matching the generator's cluster layout: every item carries its
/// cluster term plus a coarser group term shared by pairs of clusters.
pub fn synthetic_catalog(n_items: usize, n_clusters: usize) -> Catalog {
    let n_clusters = n_clusters.clamp(1, n_items.max(1));
    (1..=n_items)
        .map(|i| {
            let c = (i - 1) % n_clusters;
            let meta = ItemMeta {
                item_id: i as ItemId,
                title: format!("Item {i}"),
                terms: vec![format!("cluster{c}"), format!("group{}", c / 2)],
            };
            (i as ItemId, meta)
        })
        .collect()
}

/// Synthetic events plus matching catalog, packaged as a dataset.
pub fn synthetic_dataset(
    n_users: usize,
    n_items: usize,
    n_events: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Dataset, IngestError> {
    let events = generate_synthetic_events_with(n_users, n_items, n_events, seed, cfg)?;
    Dataset::new("synthetic", events, synthetic_catalog(n_items, cfg.n_clusters))
}
