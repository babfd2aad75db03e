use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use dynrec::algos::rules::rules_from_csv;
use dynrec::config::KEYS;
use tempfile::TempDir;

fn dynrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynrec")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &TempDir, events: usize) -> PathBuf {
    let out = dir.path().join("synth.ds");
    let o = dynrec(&[
        "synth",
        "--users",
        "50",
        "--items",
        "80",
        "--events",
        &events.to_string(),
        "--seed",
        "1",
        "-o",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

const RATINGS: &str = concat!(
    "1::1::5::100\n1::2::4::101\n1::3::1::102\n2::1::5::100\n2::2::5::105\n2::4::4::106\n",
    "3::2::2::100\n3::3::5::103\n3::4::4::104\n9::5::5::100\n",
);
const MOVIES: &str = concat!(
    "1::Toy Story (1995)::Animation|Comedy\n2::Heat (1995)::Action|Crime\n3::Casino (1995)::Crime|Drama\n",
    "4::Babe (1995)::Comedy|Drama\n5::Nixon (1995)::Drama\n",
);

#[test]
fn ingest_movielens_writes_archive_and_stats() {
    let dir = TempDir::new().unwrap();
    let (r, m, ds) = (write(&dir, "ratings.dat", RATINGS), write(&dir, "movies.dat", MOVIES), dir.path().join("ml.ds"));
    let o = dynrec(&["ingest", "--format", "movielens", s(&r), s(&m), "-o", s(&ds)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "users=4 items=5 interactions=10 rejected_lines=0\n");
    let dataset = dynrec::archive::load(&ds).unwrap();
    assert_eq!(dataset.id, "movielens");
    assert_eq!(dataset.catalog.len(), 5);
}

#[test]
fn ingest_missing_file_names_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.dat");
    let o = dynrec(&["ingest", "--format", "movielens", s(&missing), "-o", s(&dir.path().join("x.ds"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.dat"));
}

#[test]
fn ingest_over_reject_limit_fails_with_report() {
    let dir = TempDir::new().unwrap();
    let r = write(&dir, "ratings.dat", "1::1::5::1\nbroken\n2::1::9::1\n");
    let rejects = dir.path().join("rejects.csv");
    let o = dynrec(&[
        "ingest",
        "--format",
        "movielens",
        s(&r),
        "-o",
        s(&dir.path().join("x.ds")),
        "--rejects",
        s(&rejects),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let report = std::fs::read_to_string(rejects).unwrap();
    assert!(report.starts_with("line_number,reason\n2,"));
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn ingest_event_log_round_trip() {
    let dir = TempDir::new().unwrap();
    let (ds, ev, movies) = (dir.path().join("a.ds"), dir.path().join("ev.csv"), dir.path().join("movies.dat"));
    let o = dynrec(&[
        "synth",
        "--users",
        "10",
        "--items",
        "20",
        "--events",
        "100",
        "-o",
        s(&ds),
        "--events-csv",
        s(&ev),
        "--movies-dat",
        s(&movies),
    ]);
    assert!(o.status.success());
    let back = dir.path().join("b.ds");
    let o = dynrec(&["ingest", "--format", "events", s(&ev), s(&movies), "-o", s(&back), "--id", "synthetic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (a, b) = (dynrec::archive::load(&ds).unwrap(), dynrec::archive::load(&back).unwrap());
    assert_eq!(a.interactions, b.interactions);
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.catalog.keys().collect::<Vec<_>>(), b.catalog.keys().collect::<Vec<_>>());
}

#[test]
fn recommend_hybrid_lists_k_rows_deterministically() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 1000);
    let args = ["recommend", "--dataset", s(&ds), "--user", "1", "--algo", "hybrid"];
    let first = dynrec(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let text = stdout(&first);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,item_id,score");
    assert_eq!(lines.len(), 11);
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{},", i + 1)));
    }
    assert_eq!(first.stdout, dynrec(&args).stdout);
}

#[test]
fn recommend_each_base_algorithm() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 1000);
    for algo in ["content", "cf", "rules"] {
        let o = dynrec(&["recommend", "--dataset", s(&ds), "--user", "2", "--algo", algo, "-n", "5"]);
        assert_eq!(o.status.code(), Some(0), "{algo}: {}", stderr(&o));
        assert!(stdout(&o).lines().count() <= 6);
    }
}

#[test]
fn recommend_unknown_user_exits_3() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 300);
    let o = dynrec(&["recommend", "--dataset", s(&ds), "--user", "4242"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("4242"));
}

#[test]
fn recommend_cf_without_peers_warns() {
    let dir = TempDir::new().unwrap();
    let (r, m, ds) = (write(&dir, "ratings.dat", RATINGS), write(&dir, "movies.dat", MOVIES), dir.path().join("ml.ds"));
    assert!(dynrec(&["ingest", "--format", "movielens", s(&r), s(&m), "-o", s(&ds)]).status.success());
    let o = dynrec(&["recommend", "--dataset", s(&ds), "--user", "9", "--algo", "cf"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("no co-rated peers"));
    // Every unseen item falls back to the user's mean rating of 5.
    let rows: Vec<String> = stdout(&o).lines().skip(1).map(str::to_string).collect();
    assert_eq!(rows, vec!["1,1,5.000000", "2,2,5.000000", "3,3,5.000000", "4,4,5.000000"]);
}

#[test]
fn mine_three_transaction_example() {
    let dir = TempDir::new().unwrap();
    let log = "user_id,item_id,behavior,timestamp\n1,1,purchase,1\n1,2,purchase,1\n2,1,purchase,1\n2,2,purchase,1\n3,1,purchase,1\n3,3,purchase,1\n";
    let (ev, ds) = (write(&dir, "ev.csv", log), dir.path().join("t.ds"));
    assert!(dynrec(&["ingest", "--format", "events", s(&ev), "-o", s(&ds)]).status.success());
    let o =
        dynrec(&["mine", "--dataset", s(&ds), "--set", "rules.min_support=0.6", "--set", "rules.min_confidence=0.6"]);
    assert_eq!(o.status.code(), Some(0));
    let two_thirds = 2.0_f64 / 3.0;
    assert_eq!(
        stdout(&o),
        format!("antecedent,consequent,support,confidence\n2,1,{two_thirds},1\n1,2,{two_thirds},{two_thirds}\n")
    );
}

#[test]
fn mine_with_unreachable_support_prints_header_only() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 1000);
    let o = dynrec(&["mine", "--dataset", s(&ds), "--set", "rules.min_support=1.0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "antecedent,consequent,support,confidence\n");
}

#[test]
fn mined_rules_reread_with_invariants() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 1000);
    let out = dir.path().join("rules.csv");
    let o = dynrec(&["mine", "--dataset", s(&ds), "--set", "rules.min_support=0.05", "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let rules = rules_from_csv(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(!rules.is_empty());
    for r in &rules {
        assert!(r.support >= 0.05 && r.support <= 1.0);
        assert!(r.confidence >= 0.3 && r.confidence <= 1.0);
        assert!(r.antecedent.iter().all(|i| !r.consequent.contains(i)));
        assert!(r.antecedent.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn evaluate_fixture_writes_four_rows_quickly() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 1000);
    let out = dir.path().join("out");
    let start = Instant::now();
    let o = dynrec(&["evaluate", "--dataset", s(&ds), "--out-dir", s(&out)]);
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "algorithm,dataset,precision,recall,f1,response_time_ms");
    let algos: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(algos, ["content", "cf", "rules", "hybrid"]);
    assert_eq!(stdout(&o), csv);
    let latency = std::fs::read_to_string(out.join("latency.csv")).unwrap();
    assert_eq!(latency.lines().count(), 5);
    assert!(latency.starts_with("algorithm,dataset,mean_ms,p95_ms,n_calls\n"));
}

#[test]
fn evaluate_same_seed_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 1000);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(dynrec(&["evaluate", "--dataset", s(&ds), "--out-dir", s(out), "--seed", "7"]).status.success());
    }
    for f in ["report.csv", "report.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn evaluate_with_latency_fills_column() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 600);
    let out = dir.path().join("out");
    let o = dynrec(&[
        "evaluate",
        "--dataset",
        s(&ds),
        "--out-dir",
        s(&out),
        "--with-latency",
        "--set",
        "eval.latency_requests=20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| !l.ends_with(',')));
}

#[test]
fn evaluate_preconditions_exit_4() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 300);
    let o = dynrec(&["evaluate", "--dataset", s(&ds), "--out-dir", s(&dir.path().join("o")), "--folds", "1"]);
    assert_eq!(o.status.code(), Some(4));

    let browse: String = (1..=30).map(|i| format!("{},{},browse,{i}\n", 1 + i % 4, i)).collect();
    let ev = write(&dir, "browse.csv", &format!("user_id,item_id,behavior,timestamp\n{browse}"));
    let bds = dir.path().join("browse.ds");
    assert!(dynrec(&["ingest", "--format", "events", s(&ev), "-o", s(&bds)]).status.success());
    let o = dynrec(&["evaluate", "--dataset", s(&bds), "--out-dir", s(&dir.path().join("o2"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("no eligible test users"));
}

#[test]
fn report_reemits_saved_json() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 600);
    let out = dir.path().join("out");
    assert!(dynrec(&["evaluate", "--dataset", s(&ds), "--out-dir", s(&out)]).status.success());
    let o = dynrec(&["report", s(&out.join("report.json"))]);
    assert_eq!(o.stdout, std::fs::read(out.join("report.csv")).unwrap());
    let o = dynrec(&["report", s(&out.join("report.json")), "--format", "json"]);
    assert_eq!(o.stdout, std::fs::read(out.join("report.json")).unwrap());
}

#[test]
fn config_file_and_overrides() {
    let dir = TempDir::new().unwrap();
    let ds = synth(&dir, 600);
    let cfg = write(&dir, "cfg.toml", "[eval]\nk = 3\n");
    let o = dynrec(&["recommend", "--config", s(&cfg), "--dataset", s(&ds), "--user", "1", "--algo", "content"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 4);
    let bad = write(&dir, "bad.toml", "[eval]\nnope = 3\n");
    assert_eq!(dynrec(&["recommend", "--config", s(&bad), "--dataset", s(&ds), "--user", "1"]).status.code(), Some(1));
    assert_eq!(
        dynrec(&["recommend", "--dataset", s(&ds), "--user", "1", "--set", "cf.sim=euclid"]).status.code(),
        Some(1)
    );
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(dynrec(&["recommend", "--bogus"]).status.code(), Some(1));
    assert_eq!(dynrec(&[]).status.code(), Some(1));
    assert_eq!(dynrec(&["ingest", "--format", "xml", "a", "-o", "b"]).status.code(), Some(1));
}

#[test]
fn every_help_lists_every_config_key() {
    for sub in ["ingest", "synth", "recommend", "mine", "evaluate", "report"] {
        let o = dynrec(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        for (key, default, _) in KEYS {
            assert!(text.contains(key) && text.contains(default), "{sub} --help lacks {key}");
        }
    }
}
