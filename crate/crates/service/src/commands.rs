//! Command implementations behind the `genedit` binary, kept in the library
//! so tests can call them directly.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use genedit_core::clock::SystemClock;
use genedit_core::editflow::{load_golden, regression_report, EditFlow, RegressionReport};
use genedit_core::evalkit::{
    ablation_table, load_benchmark, run_eval, sample_per_database, AblationConfig, AblationRow, ExcludedCase,
    SampleSpec,
};
use genedit_core::exec::{SqlExecutor, SqliteExecutor};
use genedit_core::generation::GenerationConfig;
use genedit_core::knowledge::{
    ingest_instructions, ingest_intents, ingest_query_log, ingest_schema, read_schema, tag_schema, IngestReport,
    IntentSpec, KnowledgeSnapshot, KnowledgeStore, QueryLogEntry, Records,
};
use genedit_core::provider::ChatProvider;
use genedit_core::sqlkit::Dialect;

pub type CliError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub benchmark: PathBuf,
    pub fraction: f64,
    pub seed: u64,
    /// One extra table row per flag, after the full pipeline row.
    pub ablate: Vec<String>,
    pub workers: usize,
    /// Knowledge set to start from; the benchmark schemas are added on top.
    pub knowledge: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub benchmark: String,
    pub fraction: f64,
    pub seed: u64,
    pub sampled: usize,
    pub excluded: Vec<ExcludedCase>,
    pub rows: Vec<AblationRow>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        ablation_table(&self.rows)
    }
}

/// Records from `knowledge` (if any) plus the schema of every benchmark
/// database, held in memory only.
fn eval_knowledge(knowledge: Option<&Path>, executor: &SqliteExecutor) -> Result<KnowledgeSnapshot, CliError> {
    let (label, mut records) = match knowledge {
        Some(dir) => {
            let store = KnowledgeStore::open(dir, Arc::new(SystemClock))?;
            let head = store.head();
            let records = store.version(&head)?.records.clone();
            (format!("eval:{head}"), records)
        }
        None => ("eval".to_string(), Records::default()),
    };
    for db in executor.databases() {
        let mut elements = read_schema(executor, &db)?;
        tag_schema(&records, &mut elements);
        let tables: Vec<String> = elements.iter().map(|e| e.table.clone()).collect();
        records.schema.retain(|s| !tables.contains(&s.table));
        records.schema.extend(elements);
    }
    records.sort();
    Ok(KnowledgeSnapshot::detached(&label, records))
}

pub fn eval(args: &EvalArgs, provider: &dyn ChatProvider, generation: &GenerationConfig) -> Result<EvalReport, CliError> {
    if !(args.fraction > 0.0 && args.fraction <= 1.0) {
        return Err(format!("--fraction must be in (0, 1], got {}", args.fraction).into());
    }
    let mut configs = vec![AblationConfig::default()];
    for flag in &args.ablate {
        configs.push(AblationConfig::only(flag)?);
    }
    let mut executor = SqliteExecutor::new();
    let bench = load_benchmark(&args.benchmark, &mut executor)?;
    let knowledge = eval_knowledge(args.knowledge.as_deref(), &executor)?;
    let cases = sample_per_database(&bench.cases, &SampleSpec { fraction: args.fraction, seed: args.seed });
    let rows = configs
        .into_iter()
        .map(|ablation| {
            let config = GenerationConfig { ablation: ablation.clone(), ..generation.clone() };
            let (result, _) = run_eval(&cases, &knowledge, provider, &executor, &config, args.workers);
            AblationRow { label: ablation.label(), result }
        })
        .collect();
    Ok(EvalReport {
        benchmark: args.benchmark.display().to_string(),
        fraction: args.fraction,
        seed: args.seed,
        sampled: cases.len(),
        excluded: bench.excluded,
        rows,
    })
}

#[derive(Debug, Clone)]
pub enum IngestSource {
    Intents(PathBuf),
    QueryLog(PathBuf),
    Docs(Vec<PathBuf>),
    Schema(String),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

/// Ingests onto head and returns the report of the new version.
pub fn ingest(
    store: &KnowledgeStore,
    source: &IngestSource,
    provider: &dyn ChatProvider,
    executor: &SqliteExecutor,
    actor: &str,
) -> Result<IngestReport, CliError> {
    let head = store.head();
    Ok(match source {
        IngestSource::Intents(path) => {
            let specs: Vec<IntentSpec> = read_json(path)?;
            let version_id = ingest_intents(store, &specs, &head, actor)?;
            IngestReport { version_id, added: specs.len(), skipped: Vec::new() }
        }
        IngestSource::QueryLog(path) => {
            let entries: Vec<QueryLogEntry> = read_json(path)?;
            ingest_query_log(store, &entries, &head, actor, Dialect::Sqlite)?
        }
        IngestSource::Docs(paths) => {
            let mut docs = Vec::new();
            for p in paths {
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                docs.push((id, std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?));
            }
            ingest_instructions(store, &docs, &head, provider, actor)?
        }
        IngestSource::Schema(db_id) => ingest_schema(store, executor, db_id, &head, actor)?,
    })
}

/// Golden cases against head, or against a session's submitted edits.
#[allow(clippy::too_many_arguments)]
pub fn regression(
    store: Arc<KnowledgeStore>,
    sessions_file: &Path,
    golden_file: &Path,
    session: Option<&str>,
    provider: &dyn ChatProvider,
    executor: &SqliteExecutor,
    generation: &GenerationConfig,
    workers: usize,
) -> Result<RegressionReport, CliError> {
    let golden = load_golden(golden_file, executor)?;
    match session {
        Some(id) => {
            let flow = EditFlow::open(store, sessions_file)?;
            Ok(flow.run_regression(id, &golden, provider, executor, generation, workers)?)
        }
        None => {
            let head = store.snapshot(&store.head())?;
            let clock = store.clock().clone();
            Ok(regression_report(&head, &head, &golden, provider, executor, generation, workers, || clock.now()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use genedit_core::fixtures::minibench::{oracle_script, write_mini_benchmark};
    use genedit_core::provider::ScriptedProvider;

    #[test]
    fn eval_rows_follow_the_flags() {
        let dir = tempfile::tempdir().unwrap();
        write_mini_benchmark(dir.path()).unwrap();
        let args = EvalArgs {
            benchmark: dir.path().to_path_buf(),
            fraction: 1.0,
            seed: 1,
            ablate: vec!["instructions".into(), "pseudo_sql".into()],
            workers: 2,
            knowledge: None,
        };
        let provider = ScriptedProvider::new(oracle_script(&[]));
        let report = eval(&args, &provider, &GenerationConfig::default()).unwrap();
        let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["full pipeline", "w/o Instructions", "w/o Pseudo-SQL"]);
        assert_eq!(report.rows[0].result.total.ex, 100.0);
        assert_eq!(report.sampled, 8);
        assert!(report.table().lines().next().unwrap().contains("Chall."));

        let bad = EvalArgs { fraction: 0.0, ..args.clone() };
        assert!(eval(&bad, &provider, &GenerationConfig::default()).is_err());
        let unknown = EvalArgs { ablate: vec!["plan".into()], ..args };
        assert!(eval(&unknown, &provider, &GenerationConfig::default()).is_err());
    }
}
