//! `dynrec`: ingest data, mine rules, recommend, and run seeded evaluations.
//!
//! Exit codes: 0 success, 1 usage, 2 ingest failure, 3 unknown entity,
//! 4 evaluation precondition failure.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dynrec::algos::rules::{mine_rules, rules_to_csv};
use dynrec::archive;
use dynrec::config::{keys_help, Config};
use dynrec::engine::user_transactions;
use dynrec::eval::{self, emit_report, latency_csv, EvalError, ReportFormat};
use dynrec::ingest::{self, Catalog, Dataset, IngestError, ParseOptions, SynthConfig};
use dynrec::{Algorithm, FusionWeights, ItemId, Models, ScoredItem, UserId};

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

const USAGE: u8 = 1;
const INGEST: u8 = 2;
const UNKNOWN: u8 = 3;
const EVAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "dynrec", version, about = "Hybrid recommender with time-decayed user interest")]
#[command(after_help = keys_help())]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse raw data into a validated dataset archive.
    #[command(after_help = keys_help())]
    Ingest(IngestArgs),
    /// Generate a seeded synthetic behavior dataset.
    #[command(after_help = keys_help())]
    Synth(SynthArgs),
    /// Print top-N recommendations for one user as CSV.
    #[command(after_help = keys_help())]
    Recommend(RecommendArgs),
    /// Mine association rules and print them as CSV.
    #[command(after_help = keys_help())]
    Mine(MineArgs),
    /// Cross-validate every algorithm and write report files.
    #[command(after_help = keys_help())]
    Evaluate(EvaluateArgs),
    /// Re-emit a saved JSON report.
    #[command(after_help = keys_help())]
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InputFormat {
    /// `ratings.dat` then optional `movies.dat`.
    Movielens,
    /// Event-log CSV then optional `movies.dat`-style catalog.
    Events,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long, value_enum)]
    format: InputFormat,
    /// Interaction file, then an optional catalog file.
    #[arg(required = true, num_args = 1..=2)]
    inputs: Vec<PathBuf>,
    #[arg(short, long, value_name = "PATH")]
    output: PathBuf,
    /// Write rejected lines as CSV here.
    #[arg(long, value_name = "PATH")]
    rejects: Option<PathBuf>,
    /// Dataset id used in reports; defaults to the format name.
    #[arg(long)]
    id: Option<String>,
    /// Fraction of lines that may be rejected.
    #[arg(long, default_value_t = 0.01)]
    max_reject_rate: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long, default_value_t = 1000)]
    events: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    /// Browse,click,purchase frequencies.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.2, 0.1])]
    mix: Vec<f64>,
    #[arg(short, long, value_name = "PATH")]
    output: PathBuf,
    /// Also write the raw event log CSV.
    #[arg(long, value_name = "PATH")]
    events_csv: Option<PathBuf>,
    /// Also write the catalog in `movies.dat` layout.
    #[arg(long, value_name = "PATH")]
    movies_dat: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgoArg {
    Content,
    Cf,
    Rules,
    Hybrid,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Content => Algorithm::Content,
            AlgoArg::Cf => Algorithm::Cf,
            AlgoArg::Rules => Algorithm::Rules,
            AlgoArg::Hybrid => Algorithm::Hybrid,
        }
    }
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,
    #[arg(long)]
    user: UserId,
    #[arg(long, value_enum, default_value = "hybrid")]
    algo: AlgoArg,
    /// List length; defaults to eval.k.
    #[arg(short, long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct MineArgs {
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,
    /// Write the rules here instead of stdout.
    #[arg(short, long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Shorthand for --set eval.seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for --set eval.folds=N.
    #[arg(long)]
    folds: Option<usize>,
    /// Also put mean latency in report.csv and report.json.
    #[arg(long)]
    with_latency: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// A report.json written by `evaluate`.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

fn load_config(args: &ConfigArgs) -> Result<Config, Failure> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path).map_err(|e| fail(USAGE)(e.into()))?,
        None => Config::default(),
    };
    for kv in &args.overrides {
        let (key, value) =
            kv.split_once('=').ok_or_else(|| fail(USAGE)(anyhow!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(key.trim(), value.trim()).map_err(|e| fail(USAGE)(e.into()))?;
    }
    Ok(cfg)
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).with_context(|| format!("cannot open {}", path.display())).map_err(fail(INGEST))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display())).map_err(fail(USAGE))
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    archive::load(path).with_context(|| format!("cannot load dataset {}", path.display())).map_err(fail(INGEST))
}

fn cmd_ingest(a: &IngestArgs) -> Result<(), Failure> {
    let opts = ParseOptions { max_reject_rate: a.max_reject_rate };
    let write_rejects = |report: &ingest::RejectReport| -> Result<(), Failure> {
        match &a.rejects {
            Some(path) => write_file(path, report.to_csv().as_bytes()),
            None => Ok(()),
        }
    };
    let ingest_err = |path: &Path, e: IngestError| -> Failure {
        if let IngestError::TooManyRejects { report, .. } = &e {
            if let Err(w) = write_rejects(report) {
                return w;
            }
        }
        fail(INGEST)(anyhow::Error::new(e).context(format!("cannot ingest {}", path.display())))
    };

    let events_path = &a.inputs[0];
    let source = open(events_path)?;
    let parsed = match a.format {
        InputFormat::Movielens => ingest::parse_movielens_ratings(source, &opts),
        InputFormat::Events => ingest::parse_event_log(source, &opts),
    }
    .map_err(|e| ingest_err(events_path, e))?;
    let mut report = parsed.report;

    let catalog = match a.inputs.get(1) {
        Some(path) => {
            let movies = ingest::parse_movielens_movies(open(path)?, &opts).map_err(|e| ingest_err(path, e))?;
            for w in &movies.report.warnings {
                eprintln!("warning: {}:{}: {}", path.display(), w.line, w.reason);
            }
            report.rejects.extend(movies.report.rejects);
            movies.value
        }
        None => Catalog::new(),
    };
    write_rejects(&report)?;

    let id = a.id.clone().unwrap_or_else(|| {
        match a.format {
            InputFormat::Movielens => "movielens",
            InputFormat::Events => "events",
        }
        .to_string()
    });
    let dataset = Dataset::new(&id, parsed.value, catalog).map_err(|e| fail(INGEST)(e.into()))?;
    if dataset.catalog_incomplete {
        eprintln!("warning: some interacted items have no catalog entry");
    }
    archive::save(&dataset, &a.output).map_err(|e| fail(USAGE)(e.into()))?;
    println!("{} rejected_lines={}", dataset.stats, report.rejects.len());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Failure> {
    let cfg =
        SynthConfig { behavior_mix: [a.mix[0], a.mix[1], a.mix[2]], n_clusters: a.clusters, ..SynthConfig::default() };
    let dataset =
        ingest::synthetic_dataset(a.users, a.items, a.events, a.seed, &cfg).map_err(|e| fail(USAGE)(e.into()))?;
    if let Some(path) = &a.events_csv {
        let log = ingest::write_event_log(&dataset.interactions).map_err(|e| fail(USAGE)(e.into()))?;
        write_file(path, log.as_bytes())?;
    }
    if let Some(path) = &a.movies_dat {
        write_file(path, ingest::write_movielens_movies(&dataset.catalog).as_bytes())?;
    }
    archive::save(&dataset, &a.output).map_err(|e| fail(USAGE)(e.into()))?;
    println!("{}", dataset.stats);
    Ok(())
}

fn hybrid_weights(dataset: &Dataset, models: &Models, cfg: &Config) -> Result<FusionWeights, Failure> {
    if let Some(w) = cfg.fusion_weights() {
        return Ok(w);
    }
    eval::fit_fusion_weights(&dataset.interactions, models.index.as_ref(), cfg, cfg.eval.seed)
        .map_err(|e| fail(EVAL)(e.into()))
}

fn ranked_csv(items: &[ScoredItem]) -> String {
    let mut out = String::from("rank,item_id,score\n");
    for (rank, s) in items.iter().enumerate() {
        out.push_str(&format!("{},{},{:.6}\n", rank + 1, s.item_id, s.score));
    }
    out
}

fn cmd_recommend(a: &RecommendArgs, cfg: &Config) -> Result<String, Failure> {
    let dataset = load_dataset(&a.dataset)?;
    if !dataset.has_user(a.user) {
        return Err(fail(UNKNOWN)(anyhow!("unknown user {} in dataset {}", a.user, dataset.id)));
    }
    let models = Models::fit(&dataset.interactions, &dataset.catalog, cfg).map_err(|e| fail(USAGE)(e.into()))?;
    let algo = Algorithm::from(a.algo);
    let n = a.n.unwrap_or(cfg.eval.k);
    if matches!(algo, Algorithm::Cf | Algorithm::Hybrid) && models.cf_has_no_peers(a.user) {
        eprintln!("warning: user {} has no co-rated peers; cf falls back to the user's mean rating", a.user);
    }
    if algo == Algorithm::Content && models.index.is_none() {
        eprintln!("warning: dataset has no catalog; content recommendations are empty");
    }
    let weights = match algo {
        Algorithm::Hybrid => hybrid_weights(&dataset, &models, cfg)?,
        _ => FusionWeights::uniform(),
    };
    Ok(ranked_csv(&models.recommend(algo, a.user, n, &weights)))
}

fn cmd_mine(a: &MineArgs, cfg: &Config) -> Result<String, Failure> {
    let dataset = load_dataset(&a.dataset)?;
    let transactions: Vec<Vec<ItemId>> = user_transactions(&dataset.interactions, cfg.eval.relevance_threshold)
        .into_values()
        .map(|basket| basket.into_iter().collect())
        .collect();
    let rules = mine_rules(&transactions, &cfg.rules).map_err(|e| fail(USAGE)(e.into()))?;
    let csv = rules_to_csv(&rules);
    match &a.output {
        Some(path) => {
            write_file(path, csv.as_bytes())?;
            eprintln!("{} rules from {} transactions", rules.len(), transactions.len());
            Ok(String::new())
        }
        None => Ok(csv),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    let code = match e {
        EvalError::Engine(_) => USAGE,
        _ => EVAL,
    };
    fail(code)(anyhow::Error::new(e).context("evaluation failed"))
}

fn cmd_evaluate(a: &EvaluateArgs, mut cfg: Config) -> Result<String, Failure> {
    if let Some(seed) = a.seed {
        cfg.eval.seed = seed;
    }
    if let Some(folds) = a.folds {
        cfg.eval.folds = folds;
    }
    let dataset = load_dataset(&a.dataset)?;
    let mut report = eval::run_experiment(&dataset, &cfg).map_err(eval_failure)?;
    let mut timed = report.clone();
    eval::measure_report_latency(&dataset, &cfg, &mut timed).map_err(eval_failure)?;
    if a.with_latency {
        report = timed.clone();
    }
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("cannot create {}", a.out_dir.display()))
        .map_err(fail(USAGE))?;
    let csv = emit_report(&report, ReportFormat::Csv);
    write_file(&a.out_dir.join("report.csv"), &csv)?;
    write_file(&a.out_dir.join("report.json"), &emit_report(&report, ReportFormat::Json))?;
    write_file(&a.out_dir.join("latency.csv"), latency_csv(&timed).as_bytes())?;
    Ok(String::from_utf8(csv).expect("csv is utf-8"))
}

fn cmd_report(a: &ReportArgs) -> Result<String, Failure> {
    let bytes =
        std::fs::read(&a.input).with_context(|| format!("cannot read {}", a.input.display())).map_err(fail(USAGE))?;
    let report = eval::parse_report_json(&bytes).map_err(|e| fail(USAGE)(e.into()))?;
    let format = match a.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    Ok(String::from_utf8(emit_report(&report, format)).expect("report is utf-8"))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.config)?;
    let stdout = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a).map(|_| String::new())?,
        Command::Synth(a) => cmd_synth(a).map(|_| String::new())?,
        Command::Recommend(a) => cmd_recommend(a, &cfg)?,
        Command::Mine(a) => cmd_mine(a, &cfg)?,
        Command::Evaluate(a) => cmd_evaluate(a, cfg)?,
        Command::Report(a) => cmd_report(a)?,
    };
    std::io::stdout().lock().write_all(stdout.as_bytes()).context("cannot write to stdout").map_err(fail(USAGE))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
