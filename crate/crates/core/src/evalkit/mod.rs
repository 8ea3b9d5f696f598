//! Benchmark loading, per-database sampling, execution accuracy and
//! ablation runs.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use report::{ablation_table, AblationRow, TABLE_COLUMNS};

use crate::exec::{ResultSet, SqlExecutor, SqliteExecutor};
use crate::generation::{generate, GenerationConfig, GenerationTrace};
use crate::knowledge::KnowledgeSnapshot;
use crate::provider::ChatProvider;
use crate::retrieval::embed::fnv1a64;
use crate::sqlkit::{parse_query, Dialect};

/// Operators that can be switched off for an ablation run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub disable_schema_linking: bool,
    pub disable_instructions: bool,
    pub disable_examples: bool,
    pub disable_pseudo_sql: bool,
    pub disable_decomposition: bool,
}

/// Flag names accepted by `--ablate`, with their row labels.
pub const ABLATION_FLAGS: [(&str, &str); 5] = [
    ("schema_linking", "w/o Schema Linking"),
    ("instructions", "w/o Instructions"),
    ("examples", "w/o Examples"),
    ("pseudo_sql", "w/o Pseudo-SQL"),
    ("decomposition", "w/o Decomposition"),
];

impl AblationConfig {
    pub fn only(flag: &str) -> Result<Self, EvalError> {
        let mut a = AblationConfig::default();
        a.set(flag)?;
        Ok(a)
    }

    pub fn set(&mut self, flag: &str) -> Result<(), EvalError> {
        let field = match flag {
            "schema_linking" => &mut self.disable_schema_linking,
            "instructions" => &mut self.disable_instructions,
            "examples" => &mut self.disable_examples,
            "pseudo_sql" => &mut self.disable_pseudo_sql,
            "decomposition" => &mut self.disable_decomposition,
            other => return Err(EvalError::UnknownAblation(other.to_string())),
        };
        *field = true;
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == AblationConfig::default()
    }

    pub fn label(&self) -> String {
        let names: Vec<&str> = ABLATION_FLAGS
            .iter()
            .filter(|(flag, _)| {
                let mut probe = AblationConfig::default();
                probe.set(flag).is_ok() && self.contains(&probe)
            })
            .map(|(_, label)| *label)
            .collect();
        if names.is_empty() {
            "full pipeline".to_string()
        } else {
            names.join(", ")
        }
    }

    fn contains(&self, other: &AblationConfig) -> bool {
        (!other.disable_schema_linking || self.disable_schema_linking)
            && (!other.disable_instructions || self.disable_instructions)
            && (!other.disable_examples || self.disable_examples)
            && (!other.disable_pseudo_sql || self.disable_pseudo_sql)
            && (!other.disable_decomposition || self.disable_decomposition)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("database `{db_id}` not found at {path}")]
    MissingDatabase { db_id: String, path: String },
    #[error("malformed questions file {path}: {message}")]
    MalformedQuestionsFile { path: String, message: String },
    #[error("unknown ablation flag `{0}`")]
    UnknownAblation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
    #[default]
    Unknown,
}

impl<'de> Deserialize<'de> for Difficulty {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        Ok(match s.as_deref().map(str::to_ascii_lowercase).as_deref() {
            Some("simple") => Difficulty::Simple,
            Some("moderate") => Difficulty::Moderate,
            Some("challenging") => Difficulty::Challenging,
            _ => Difficulty::Unknown,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    #[serde(default)]
    pub question_id: u64,
    pub db_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(alias = "SQL")]
    pub gold_sql: String,
    #[serde(default)]
    pub difficulty: Difficulty,
}

impl BenchmarkCase {
    /// Text handed to the pipeline: the question plus any evidence.
    pub fn query_text(&self) -> String {
        match self.evidence.as_deref().map(str::trim) {
            Some(e) if !e.is_empty() => format!("{} (evidence: {e})", self.question.trim()),
            _ => self.question.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedCase {
    pub question_id: u64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub cases: Vec<BenchmarkCase>,
    pub excluded: Vec<ExcludedCase>,
}

const QUESTION_FILES: [&str; 2] = ["questions.json", "dev.json"];
const DATABASE_DIRS: [&str; 2] = ["databases", "dev_databases"];

fn first_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.exists())
}

/// Reads a BIRD-style directory: a questions file plus
/// `<databases>/<db_id>/<db_id>.sqlite`. Databases are registered on
/// `executor`; cases whose gold SQL fails are excluded with a note.
pub fn load_benchmark(dir: &Path, executor: &mut SqliteExecutor) -> Result<Benchmark, EvalError> {
    let questions = first_existing(dir, &QUESTION_FILES).ok_or_else(|| EvalError::MalformedQuestionsFile {
        path: dir.join(QUESTION_FILES[0]).display().to_string(),
        message: "no questions file".into(),
    })?;
    let malformed = |message: String| EvalError::MalformedQuestionsFile {
        path: questions.display().to_string(),
        message,
    };
    let text = fs::read_to_string(&questions).map_err(|e| malformed(e.to_string()))?;
    let raw: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let mut cases = Vec::with_capacity(raw.len());
    for (i, value) in raw.into_iter().enumerate() {
        let has_id = value.get("question_id").is_some();
        let mut case: BenchmarkCase =
            serde_json::from_value(value).map_err(|e| malformed(format!("entry {i}: {e}")))?;
        if !has_id {
            case.question_id = i as u64;
        }
        cases.push(case);
    }

    let db_root = first_existing(dir, &DATABASE_DIRS).unwrap_or_else(|| dir.join(DATABASE_DIRS[0]));
    let db_ids: BTreeSet<&str> = cases.iter().map(|c| c.db_id.as_str()).collect();
    for db_id in db_ids {
        if executor.databases().iter().any(|d| d == db_id) {
            continue;
        }
        let path = db_root.join(db_id).join(format!("{db_id}.sqlite"));
        if !path.exists() {
            return Err(EvalError::MissingDatabase { db_id: db_id.to_string(), path: path.display().to_string() });
        }
        executor
            .add_file(db_id, &path)
            .map_err(|_| EvalError::MissingDatabase { db_id: db_id.to_string(), path: path.display().to_string() })?;
    }

    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for case in cases {
        match executor.execute(&case.db_id, &case.gold_sql) {
            Ok(_) => kept.push(case),
            Err(e) => excluded.push(ExcludedCase { question_id: case.question_id, note: format!("gold SQL failed: {e}") }),
        }
    }
    Ok(Benchmark { cases: kept, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl SampleSpec {
    pub fn size(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        ((self.fraction * n as f64).round() as usize).clamp(1, n)
    }
}

/// Stratified sample: `max(1, round(fraction * n))` cases per database,
/// drawn with a generator seeded from the spec seed and the db id. The
/// output keeps the input order.
pub fn sample_per_database(cases: &[BenchmarkCase], spec: &SampleSpec) -> Vec<BenchmarkCase> {
    let mut by_db: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in cases.iter().enumerate() {
        by_db.entry(&c.db_id).or_default().push(i);
    }
    let mut keep = BTreeSet::new();
    for (db_id, indices) in by_db {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ fnv1a64(db_id.as_bytes()));
        let picks = rand::seq::index::sample(&mut rng, indices.len(), spec.size(indices.len()));
        keep.extend(picks.into_iter().map(|p| indices[p]));
    }
    keep.into_iter().map(|i| cases[i].clone()).collect()
}

/// Execution match. Ordered comparison when the gold query sorts its
/// output, multiset comparison otherwise. Integers and reals compare by
/// value.
pub fn ex_match(pred: &ResultSet, gold: &ResultSet, gold_has_order_by: bool) -> bool {
    if gold_has_order_by {
        pred.row_keys() == gold.row_keys()
    } else {
        pred.multiset_key() == gold.multiset_key()
    }
}

/// Whether the top-level query has an ORDER BY.
pub fn has_order_by(sql: &str, dialect: Dialect) -> bool {
    parse_query(sql, dialect).map(|q| q.order_by.is_some()).unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub question_id: u64,
    pub db_id: String,
    pub difficulty: Difficulty,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub trace_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bucket {
    pub cases: usize,
    pub matches: usize,
    /// Percentage rounded half-up to two decimals.
    pub ex: f64,
}

impl Bucket {
    fn from_counts(cases: usize, matches: usize) -> Self {
        let ex = if cases == 0 {
            0.0
        } else {
            let hundredths = (matches as u128 * 20_000 + cases as u128) / (2 * cases as u128);
            hundredths as f64 / 100.0
        };
        Bucket { cases, matches, ex }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExResult {
    pub ablation: AblationConfig,
    pub cases: Vec<CaseResult>,
    pub by_difficulty: BTreeMap<Difficulty, Bucket>,
    pub total: Bucket,
}

impl ExResult {
    pub fn from_cases(ablation: AblationConfig, cases: Vec<CaseResult>) -> Self {
        let mut counts: BTreeMap<Difficulty, (usize, usize)> = BTreeMap::new();
        for c in &cases {
            let e = counts.entry(c.difficulty).or_default();
            e.0 += 1;
            e.1 += c.matched as usize;
        }
        let total = Bucket::from_counts(cases.len(), cases.iter().filter(|c| c.matched).count());
        let by_difficulty = counts.into_iter().map(|(d, (n, m))| (d, Bucket::from_counts(n, m))).collect();
        ExResult { ablation, cases, by_difficulty, total }
    }

    pub fn bucket(&self, d: Difficulty) -> Option<&Bucket> {
        self.by_difficulty.get(&d)
    }
}

fn score_case(
    case: &BenchmarkCase,
    knowledge: &KnowledgeSnapshot,
    provider: &dyn ChatProvider,
    executor: &dyn SqlExecutor,
    config: &GenerationConfig,
) -> (CaseResult, GenerationTrace) {
    let trace = generate(&case.query_text(), &case.db_id, knowledge, provider, executor, config);
    let mut result = CaseResult {
        question_id: case.question_id,
        db_id: case.db_id.clone(),
        difficulty: case.difficulty,
        matched: false,
        note: None,
        trace_id: trace.request_id.clone(),
    };
    let Some(sql) = trace.final_sql.as_deref() else {
        result.note = Some(format!("no SQL produced ({:?})", trace.status));
        return (result, trace);
    };
    match (executor.execute(&case.db_id, sql), executor.execute(&case.db_id, &case.gold_sql)) {
        (Ok(pred), Ok(gold)) => {
            result.matched = ex_match(&pred, &gold, has_order_by(&case.gold_sql, config.dialect));
            if !result.matched {
                result.note = Some("result differs from gold".into());
            }
        }
        (Err(e), _) => result.note = Some(format!("prediction failed: {e}")),
        (_, Err(e)) => result.note = Some(format!("gold failed: {e}")),
    }
    (result, trace)
}

/// Generates and scores every case with `config.ablation` applied. Cases
/// run on up to `workers` threads; results keep the input order.
pub fn run_eval(
    cases: &[BenchmarkCase],
    knowledge: &KnowledgeSnapshot,
    provider: &dyn ChatProvider,
    executor: &dyn SqlExecutor,
    config: &GenerationConfig,
    workers: usize,
) -> (ExResult, Vec<GenerationTrace>) {
    let workers = workers.clamp(1, cases.len().max(1));
    let mut slots: Vec<Option<(CaseResult, GenerationTrace)>> = vec![None; cases.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cases.len() {
                    break;
                }
                let out = score_case(&cases[i], knowledge, provider, executor, config);
                done.lock().expect("eval slots")[i] = Some(out);
            });
        }
    });
    let (results, traces): (Vec<_>, Vec<_>) = slots.into_iter().map(|s| s.expect("every case scored")).unzip();
    (ExResult::from_cases(config.ablation.clone(), results), traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Cell;

    fn case(id: u64, db: &str) -> BenchmarkCase {
        BenchmarkCase {
            question_id: id,
            db_id: db.into(),
            question: format!("q{id}"),
            evidence: None,
            gold_sql: "SELECT 1".into(),
            difficulty: Difficulty::Simple,
        }
    }

    #[test]
    fn sample_sizes_follow_the_formula() {
        let cases: Vec<_> = (0..20).map(|i| case(i, "a")).chain((20..23).map(|i| case(i, "b"))).collect();
        let s = sample_per_database(&cases, &SampleSpec { fraction: 0.1, seed: 7 });
        assert_eq!(s.iter().filter(|c| c.db_id == "a").count(), 2);
        assert_eq!(s.iter().filter(|c| c.db_id == "b").count(), 1);
        assert_eq!(s, sample_per_database(&cases, &SampleSpec { fraction: 0.1, seed: 7 }));
        assert_eq!(sample_per_database(&cases, &SampleSpec { fraction: 1.0, seed: 3 }), cases);
        let ids: Vec<u64> = s.iter().map(|c| c.question_id).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(Bucket::from_counts(4, 3).ex, 75.0);
        assert_eq!(Bucket::from_counts(3, 2).ex, 66.67);
        assert_eq!(Bucket::from_counts(3, 1).ex, 33.33);
        assert_eq!(Bucket::from_counts(0, 0).ex, 0.0);
        assert_eq!(Bucket::from_counts(8, 1).ex, 12.5);
    }

    #[test]
    fn difficulty_defaults_to_unknown() {
        let c: BenchmarkCase =
            serde_json::from_str(r#"{"db_id":"x","question":"q","SQL":"SELECT 1"}"#).unwrap();
        assert_eq!(c.difficulty, Difficulty::Unknown);
        let c: BenchmarkCase =
            serde_json::from_str(r#"{"db_id":"x","question":"q","SQL":"SELECT 1","difficulty":"challenging"}"#)
                .unwrap();
        assert_eq!(c.difficulty, Difficulty::Challenging);
    }

    #[test]
    fn numeric_widening_in_match() {
        let a = ResultSet { columns: vec!["x".into()], rows: vec![vec![Cell::Int(1)]] };
        let b = ResultSet { columns: vec!["y".into()], rows: vec![vec![Cell::Real(1.0)]] };
        assert!(ex_match(&a, &b, true));
        let t = ResultSet { columns: vec!["x".into()], rows: vec![vec![Cell::Text("1".into())]] };
        assert!(!ex_match(&a, &t, false));
    }

    #[test]
    fn order_by_detection() {
        assert!(has_order_by("SELECT a FROM t ORDER BY a", Dialect::Sqlite));
        assert!(!has_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a)", Dialect::Sqlite));
    }

    #[test]
    fn ablation_flags_parse() {
        assert!(AblationConfig::default().is_identity());
        let a = AblationConfig::only("pseudo_sql").unwrap();
        assert!(a.disable_pseudo_sql && !a.disable_examples);
        assert_eq!(a.label(), "w/o Pseudo-SQL");
        assert!(AblationConfig::only("plan").is_err());
    }
}
