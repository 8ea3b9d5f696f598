use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use genedit_core::clock::SteppingClock;
use genedit_core::evalkit::*;
use genedit_core::exec::{Cell, ResultSet, SqliteExecutor};
use genedit_core::fixtures::minibench::{oracle_script, write_mini_benchmark, MINI_CASES};
use genedit_core::generation::GenerationConfig;
use genedit_core::knowledge::{ingest_schema, KnowledgeSnapshot, KnowledgeStore, ROOT_VERSION};
use genedit_core::provider::ScriptedProvider;

fn cell_eq(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Null, Cell::Null) => true,
        (Cell::Int(x), Cell::Int(y)) => x == y,
        (Cell::Int(x), Cell::Real(y)) | (Cell::Real(y), Cell::Int(x)) => *x as f64 == *y,
        (Cell::Real(x), Cell::Real(y)) => x == y,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        (Cell::Blob(x), Cell::Blob(y)) => x == y,
        _ => false,
    }
}

fn row_eq(a: &[Cell], b: &[Cell]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cell_eq(x, y))
}

/// Brute-force comparator: pairwise when ordered, otherwise strike out one
/// matching row at a time.
fn brute_match(pred: &ResultSet, gold: &ResultSet, ordered: bool) -> bool {
    if pred.rows.len() != gold.rows.len() {
        return false;
    }
    if ordered {
        return pred.rows.iter().zip(&gold.rows).all(|(a, b)| row_eq(a, b));
    }
    let mut left: Vec<&Vec<Cell>> = gold.rows.iter().collect();
    for row in &pred.rows {
        match left.iter().position(|g| row_eq(row, g)) {
            Some(i) => {
                left.swap_remove(i);
            }
            None => return false,
        }
    }
    true
}

fn rs(rows: Vec<Vec<Cell>>) -> ResultSet {
    let width = rows.first().map_or(1, Vec::len);
    ResultSet { columns: (0..width).map(|i| format!("c{i}")).collect(), rows }
}

fn i(v: i64) -> Cell {
    Cell::Int(v)
}
fn r(v: f64) -> Cell {
    Cell::Real(v)
}
fn t(v: &str) -> Cell {
    Cell::Text(v.into())
}

/// (pred, gold, gold sorted, expected match)
fn hand_pairs() -> Vec<(ResultSet, ResultSet, bool, bool)> {
    vec![
        (rs(vec![vec![i(1)]]), rs(vec![vec![i(1)]]), false, true),
        (rs(vec![vec![i(1)]]), rs(vec![vec![r(1.0)]]), false, true),
        (rs(vec![vec![i(1)]]), rs(vec![vec![t("1")]]), false, false),
        (rs(vec![vec![i(1)], vec![i(2)]]), rs(vec![vec![i(2)], vec![i(1)]]), false, true),
        (rs(vec![vec![i(1)], vec![i(2)]]), rs(vec![vec![i(2)], vec![i(1)]]), true, false),
        (rs(vec![vec![i(1)], vec![i(1)]]), rs(vec![vec![i(1)]]), false, false),
        (rs(vec![vec![i(1)], vec![i(1)], vec![i(2)]]), rs(vec![vec![i(1)], vec![i(2)], vec![i(2)]]), false, false),
        (rs(vec![]), rs(vec![]), false, true),
        (rs(vec![]), rs(vec![vec![Cell::Null]]), false, false),
        (rs(vec![vec![Cell::Null]]), rs(vec![vec![Cell::Null]]), true, true),
        (rs(vec![vec![t("a"), i(2)]]), rs(vec![vec![i(2), t("a")]]), false, false),
        (rs(vec![vec![t("a"), i(2)], vec![t("b"), i(3)]]), rs(vec![vec![t("b"), i(3)], vec![t("a"), i(2)]]), false, true),
        (rs(vec![vec![t("a"), i(2)], vec![t("b"), i(3)]]), rs(vec![vec![t("a"), i(2)], vec![t("b"), i(3)]]), true, true),
        (rs(vec![vec![r(0.5)]]), rs(vec![vec![r(0.5)]]), true, true),
        (rs(vec![vec![r(0.1 + 0.2)]]), rs(vec![vec![r(0.3)]]), false, false),
        (rs(vec![vec![t("x")]]), rs(vec![vec![t("X")]]), false, false),
        (rs(vec![vec![i(1), i(2)]]), rs(vec![vec![i(1)]]), false, false),
        (rs(vec![vec![i(-3)], vec![r(2.0)]]), rs(vec![vec![i(2)], vec![r(-3.0)]]), false, true),
        (rs(vec![vec![Cell::Blob(vec![1, 2])]]), rs(vec![vec![Cell::Blob(vec![1, 2])]]), false, true),
        (rs(vec![vec![i(7)], vec![i(8)], vec![i(9)]]), rs(vec![vec![i(7)], vec![i(8)], vec![i(9)]]), true, true),
    ]
}

#[test]
fn hand_made_pairs_agree_with_the_brute_force_comparator() {
    let pairs = hand_pairs();
    assert_eq!(pairs.len(), 20);
    for (n, (pred, gold, ordered, expected)) in pairs.iter().enumerate() {
        assert_eq!(brute_match(pred, gold, *ordered), *expected, "oracle on pair {n}");
        assert_eq!(ex_match(pred, gold, *ordered), *expected, "pair {n}");
    }
}

fn cell_strategy() -> impl Strategy<Value = Cell> {
    prop_oneof![
        Just(Cell::Null),
        (-3i64..4).prop_map(Cell::Int),
        (-3i64..4).prop_map(|v| Cell::Real(v as f64)),
        Just(Cell::Real(0.5)),
        "[ab]".prop_map(Cell::Text),
    ]
}

proptest! {
    #[test]
    fn ex_match_agrees_with_brute_force(
        pred in proptest::collection::vec(proptest::collection::vec(cell_strategy(), 2), 0..5),
        gold in proptest::collection::vec(proptest::collection::vec(cell_strategy(), 2), 0..5),
        ordered in any::<bool>(),
    ) {
        let (p, g) = (rs(pred), rs(gold));
        prop_assert_eq!(ex_match(&p, &g, ordered), brute_match(&p, &g, ordered));
    }
}

struct Bench {
    _dir: tempfile::TempDir,
    exec: SqliteExecutor,
    bench: Benchmark,
    snapshot: KnowledgeSnapshot,
}

fn bench() -> Bench {
    let dir = tempfile::tempdir().unwrap();
    write_mini_benchmark(dir.path()).unwrap();
    let mut exec = SqliteExecutor::new();
    let bench = load_benchmark(dir.path(), &mut exec).unwrap();
    let store = KnowledgeStore::in_memory(Arc::new(SteppingClock::fixed()));
    let v = ingest_schema(&store, &exec, "shop", ROOT_VERSION, "t").unwrap().version_id;
    let v = ingest_schema(&store, &exec, "league", &v, "t").unwrap().version_id;
    let snapshot = store.snapshot(&v).unwrap();
    Bench { _dir: dir, exec, bench, snapshot }
}

#[test]
fn loader_reads_every_case() {
    let b = bench();
    assert_eq!(b.bench.cases.len(), MINI_CASES.len());
    assert!(b.bench.excluded.is_empty());
    assert!(b.bench.cases.iter().all(|c| c.question.starts_with("Show me")));
    let labels: std::collections::BTreeSet<Difficulty> = b.bench.cases.iter().map(|c| c.difficulty).collect();
    assert_eq!(labels.len(), 3);
    let missing = tempfile::tempdir().unwrap();
    std::fs::write(missing.path().join("questions.json"), r#"[{"db_id":"nowhere","question":"q","SQL":"SELECT 1"}]"#)
        .unwrap();
    let err = load_benchmark(missing.path(), &mut SqliteExecutor::new()).unwrap_err();
    assert!(matches!(err, EvalError::MissingDatabase { ref db_id, .. } if db_id == "nowhere"));
}

#[test]
fn oracle_provider_scores_one_hundred() {
    let b = bench();
    let provider = ScriptedProvider::new(oracle_script(&[]));
    let (result, traces) = run_eval(&b.bench.cases, &b.snapshot, &provider, &b.exec, &GenerationConfig::default(), 4);
    assert_eq!(result.total.ex, 100.00);
    assert_eq!(traces.len(), MINI_CASES.len());
    for d in [Difficulty::Simple, Difficulty::Moderate, Difficulty::Challenging] {
        assert_eq!(result.bucket(d).unwrap().ex, 100.00);
    }
    let ids: Vec<u64> = result.cases.iter().map(|c| c.question_id).collect();
    assert_eq!(ids, (0..MINI_CASES.len() as u64).collect::<Vec<_>>());
}

#[test]
fn one_wrong_answer_in_four_scores_seventy_five() {
    let b = bench();
    let shop: Vec<BenchmarkCase> = b.bench.cases.iter().filter(|c| c.db_id == "shop").cloned().collect();
    assert_eq!(shop.len(), 4);
    let provider = ScriptedProvider::new(oracle_script(&[2]));
    let (result, _) = run_eval(&shop, &b.snapshot, &provider, &b.exec, &GenerationConfig::default(), 2);
    assert_eq!(result.total.ex, 75.00);
    assert_eq!(result.bucket(Difficulty::Moderate).unwrap().ex, 0.00);
    assert_eq!(result.bucket(Difficulty::Simple).unwrap().ex, 100.00);
    assert!(!result.cases[2].matched);
    assert!(result.cases[2].note.is_some());

    for wrong in 0..MINI_CASES.len() {
        let provider = ScriptedProvider::new(oracle_script(&[wrong]));
        let (result, _) = run_eval(&b.bench.cases, &b.snapshot, &provider, &b.exec, &GenerationConfig::default(), 3);
        assert_eq!(result.total.matches, MINI_CASES.len() - 1, "wrong answer {wrong} was scored as a match");
    }
}

fn many_cases() -> Vec<BenchmarkCase> {
    let mut out = Vec::new();
    for (db, n) in [("a", 37usize), ("b", 5), ("c", 1), ("d", 120)] {
        for k in 0..n {
            out.push(BenchmarkCase {
                question_id: out.len() as u64,
                db_id: db.into(),
                question: format!("Show me {db} {k}"),
                evidence: None,
                gold_sql: "SELECT 1".into(),
                difficulty: Difficulty::Simple,
            });
        }
    }
    out
}

#[test]
fn sampling_is_deterministic_and_stratified() {
    let cases = many_cases();
    let spec = SampleSpec { fraction: 0.1, seed: 42 };
    let first = sample_per_database(&cases, &spec);
    assert_eq!(first, sample_per_database(&cases, &spec));
    let other = sample_per_database(&cases, &SampleSpec { fraction: 0.1, seed: 43 });
    assert_ne!(first, other);
    let mut per_db: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &first {
        *per_db.entry(c.db_id.as_str()).or_default() += 1;
    }
    // max(1, round(0.1 * n))
    assert_eq!(per_db, BTreeMap::from([("a", 4), ("b", 1), ("c", 1), ("d", 12)]));
    assert_eq!(sample_per_database(&cases, &SampleSpec { fraction: 1.0, seed: 9 }), cases);
}

proptest! {
    #[test]
    fn sample_is_an_ordered_subset(seed in any::<u64>(), fraction in 0.01f64..1.0) {
        let cases = many_cases();
        let s = sample_per_database(&cases, &SampleSpec { fraction, seed });
        prop_assert!(s.windows(2).all(|w| w[0].question_id < w[1].question_id));
        prop_assert!(s.iter().all(|c| cases[c.question_id as usize] == *c));
    }
}

#[test]
fn ablation_table_covers_every_flag() {
    let b = bench();
    let provider = ScriptedProvider::new(oracle_script(&[]));
    let mut configs = vec![AblationConfig::default()];
    configs.extend(ABLATION_FLAGS.iter().map(|(f, _)| AblationConfig::only(f).unwrap()));
    let rows: Vec<AblationRow> = configs
        .into_iter()
        .map(|ablation| {
            let config = GenerationConfig { ablation: ablation.clone(), ..GenerationConfig::default() };
            let (result, _) = run_eval(&b.bench.cases, &b.snapshot, &provider, &b.exec, &config, 2);
            AblationRow { label: ablation.label(), result }
        })
        .collect();
    let table = ablation_table(&rows);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 1 + ABLATION_FLAGS.len());
    let header: Vec<&str> = lines[0].split('|').map(str::trim).collect();
    assert_eq!(header, ["Setting", "Sim.", "Mod.", "Chall.", "Total"]);
    assert!(lines[1].starts_with("full pipeline"));
    for ((_, label), line) in ABLATION_FLAGS.iter().zip(&lines[2..]) {
        assert!(line.starts_with(label), "{line}");
        assert_eq!(line.split('|').count(), 5);
        assert!(line.contains("(+0.00)"));
    }
}
