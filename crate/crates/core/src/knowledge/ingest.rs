use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::describe::describe;
use super::store::KnowledgeStore;
use super::types::{
    instruction_id, intent_id, short_hash, AuditAction, ExampleRecord, Intent, IntentIds,
    InstructionRecord, InstructionScope, ProvenanceRef, Records, SchemaElement, SourceQuery,
    TopValue,
};
use super::KnowledgeError;
use crate::exec::{ExecError, SqlExecutor};
use crate::provider::{ask, task, ChatProvider};
use crate::sqlkit::{decompose, normalize, parse, referenced_tables, rewrite_to_ctes, Dialect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLogEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub nl_text: String,
    pub sql: String,
    #[serde(default)]
    pub intents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub version_id: String,
    pub added: usize,
    pub skipped: Vec<SkippedItem>,
}

/// Resolves intent names to ids, adding unverified intents for names the
/// version does not know yet.
fn resolve_intents(records: &mut Records, names: &[String]) -> IntentIds {
    let mut ids = IntentIds::new();
    for name in names.iter().filter(|n| !n.trim().is_empty()) {
        let id = match records.intent_by_name(name) {
            Some(i) => i.id.clone(),
            None => {
                let intent = Intent {
                    id: intent_id(name),
                    name: name.trim().to_string(),
                    description: String::new(),
                    verified: false,
                    keywords: Vec::new(),
                };
                let id = intent.id.clone();
                records.intents.push(intent);
                id
            }
        };
        ids.insert(id);
    }
    ids
}

/// Decomposes logged queries into example records; unparseable queries are
/// reported and skipped.
pub fn ingest_query_log(
    store: &KnowledgeStore,
    entries: &[QueryLogEntry],
    base: &str,
    actor: &str,
    dialect: Dialect,
) -> Result<IngestReport, KnowledgeError> {
    let mut records = store.version(base)?.records.clone();
    let before = records.examples.len();
    let mut skipped = Vec::new();
    for (index, entry) in entries.iter().enumerate() {
        let form = match parse(&entry.sql, dialect).and_then(|ast| rewrite_to_ctes(&ast)) {
            Ok(form) => form,
            Err(e) => {
                skipped.push(SkippedItem { index, message: e.to_string() });
                continue;
            }
        };
        let source_id = entry.id.clone().unwrap_or_else(|| {
            let key = normalize(&entry.sql).unwrap_or_else(|_| entry.sql.clone());
            format!("q_{}", &short_hash(key.as_bytes())[..12])
        });
        let intents = resolve_intents(&mut records, &entry.intents);
        let subs = decompose(&form, &source_id);
        let mut table_of: BTreeMap<String, Option<String>> = BTreeMap::new();
        for sub in subs {
            let table = match &sub.parent_id {
                None => referenced_tables(&sub.text, dialect).into_iter().next(),
                Some(p) => table_of.get(p).cloned().flatten(),
            };
            table_of.insert(sub.id.clone(), table.clone());
            if let Some(existing) = records.examples.iter_mut().find(|e| e.id == sub.id) {
                existing.intent_ids.extend(intents.iter().cloned());
                continue;
            }
            records.examples.push(ExampleRecord {
                id: sub.id.clone(),
                nl_description: describe(&sub, table.as_deref(), &entry.nl_text),
                substatement: sub,
                intent_ids: intents.clone(),
                provenance: ProvenanceRef::query_log(&source_id),
                embedding_cache: None,
            });
        }
        match records.sources.iter_mut().find(|s| s.id == source_id) {
            Some(existing) => existing.intent_ids.extend(intents.iter().cloned()),
            None => records.sources.push(SourceQuery {
                id: source_id.clone(),
                nl_text: entry.nl_text.clone(),
                sql: entry.sql.clone(),
                db_id: entry.db_id.clone(),
                intent_ids: intents,
                provenance: ProvenanceRef::query_log(&source_id),
            }),
        }
    }
    let added = records.examples.len() - before;
    let version_id = store.commit(
        base,
        records,
        actor,
        AuditAction::Ingest,
        Vec::new(),
        None,
        Some(format!("query log: {} entries, {} skipped", entries.len(), skipped.len())),
    )?;
    Ok(IngestReport { version_id, added, skipped })
}

/// Adds or replaces intents by name.
pub fn ingest_intents(
    store: &KnowledgeStore,
    specs: &[IntentSpec],
    base: &str,
    actor: &str,
) -> Result<String, KnowledgeError> {
    let mut records = store.version(base)?.records.clone();
    for spec in specs {
        let id = intent_id(&spec.name);
        records.intents.retain(|i| i.id != id);
        records.intents.push(Intent {
            id,
            name: spec.name.trim().to_string(),
            description: spec.description.clone(),
            verified: true,
            keywords: spec.keywords.clone(),
        });
    }
    store.commit(
        base,
        records,
        actor,
        AuditAction::Ingest,
        Vec::new(),
        None,
        Some(format!("intents: {}", specs.len())),
    )
}

const EXTRACT_SYSTEM: &str = "You extract company-specific guidelines for writing SQL from documents. \
Reply with a JSON object {\"instructions\": [{\"text\": ..., \"sql_fragment\": optional, \"intents\": [intent names]}]}. \
Each text must be a sentence copied from the document.";

#[derive(Deserialize)]
#[serde(untagged)]
enum Extracted {
    Wrapped { instructions: Vec<ExtractedItem> },
    Bare(Vec<ExtractedItem>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExtractedItem {
    Text(String),
    Full {
        text: String,
        #[serde(default)]
        sql_fragment: Option<String>,
        #[serde(default)]
        intents: Vec<String>,
    },
}

/// Parses the first JSON value in `text` (fenced or bare).
pub(crate) fn first_json<T: serde::de::DeserializeOwned>(text: &str) -> Option<T> {
    let body = crate::generation::fenced_block(text).unwrap_or(text);
    let start = body.find(['{', '['])?;
    let mut stream = serde_json::Deserializer::from_str(&body[start..]).into_iter::<T>();
    stream.next()?.ok()
}

/// One provider call per document; each extracted guideline becomes a
/// generation-scope instruction with document provenance.
pub fn ingest_instructions(
    store: &KnowledgeStore,
    docs: &[(String, String)],
    base: &str,
    provider: &dyn ChatProvider,
    actor: &str,
) -> Result<IngestReport, KnowledgeError> {
    let mut records = store.version(base)?.records.clone();
    let before = records.instructions.len();
    let mut skipped = Vec::new();
    let intent_names: Vec<String> = records.intents.iter().map(|i| i.name.clone()).collect();
    for (index, (doc_id, text)) in docs.iter().enumerate() {
        let prompt = format!(
            "KNOWN INTENTS: {}\nDOCUMENT {doc_id}:\n{text}",
            intent_names.join(", ")
        );
        let reply = ask(provider, task::EXTRACT_INSTRUCTIONS, EXTRACT_SYSTEM, prompt)?;
        if reply.trim().is_empty() {
            continue;
        }
        let Some(extracted) = first_json::<Extracted>(&reply) else {
            skipped.push(SkippedItem { index, message: format!("unparseable extraction for {doc_id}") });
            continue;
        };
        let items = match extracted {
            Extracted::Wrapped { instructions } => instructions,
            Extracted::Bare(items) => items,
        };
        for item in items {
            let (ins_text, sql_fragment, names) = match item {
                ExtractedItem::Text(t) => (t, None, Vec::new()),
                ExtractedItem::Full { text, sql_fragment, intents } => (text, sql_fragment, intents),
            };
            let ins_text = ins_text.trim().to_string();
            if ins_text.is_empty() {
                continue;
            }
            let span = text.find(&ins_text).map(|o| (o as u64, ins_text.len() as u64));
            let intent_ids: IntentIds = names
                .iter()
                .filter_map(|n| records.intent_by_name(n).map(|i| i.id.clone()))
                .collect();
            let id = instruction_id(&ins_text);
            if records.instruction(&id).is_some() {
                continue;
            }
            records.instructions.push(InstructionRecord {
                id,
                text: ins_text,
                sql_fragment: sql_fragment.filter(|f| !f.trim().is_empty()),
                scope: InstructionScope::Generation,
                operator: None,
                intent_ids,
                provenance: ProvenanceRef::document(doc_id, span),
                embedding_cache: None,
            });
        }
    }
    let added = records.instructions.len() - before;
    let version_id = store.commit(
        base,
        records,
        actor,
        AuditAction::Ingest,
        Vec::new(),
        None,
        Some(format!("documents: {}", docs.len())),
    )?;
    Ok(IngestReport { version_id, added, skipped })
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// Reads tables, column types and exact top-5 value counts from a database.
pub fn read_schema(executor: &dyn SqlExecutor, db_id: &str) -> Result<Vec<SchemaElement>, ExecError> {
    let mut out = Vec::new();
    executor.with_connection(db_id, &mut |conn| {
        let sql_err = |e: rusqlite::Error| ExecError::Sql(e.to_string());
        let mut stmt = conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name")
            .map_err(sql_err)?;
        let tables: Vec<String> = stmt
            .query_map([], |r| r.get(0))
            .map_err(sql_err)?
            .collect::<Result<_, _>>()
            .map_err(sql_err)?;
        for table in tables {
            out.push(SchemaElement {
                table: table.clone(),
                column: None,
                data_type: "TABLE".into(),
                top_values: Vec::new(),
                description: None,
                intent_ids: IntentIds::new(),
            });
            let mut info = conn
                .prepare(&format!("PRAGMA table_info({})", quote_ident(&table)))
                .map_err(sql_err)?;
            let columns: Vec<(String, String)> = info
                .query_map([], |r| Ok((r.get(1)?, r.get(2)?)))
                .map_err(sql_err)?
                .collect::<Result<_, _>>()
                .map_err(sql_err)?;
            for (column, data_type) in columns {
                let mut top = conn
                    .prepare(&format!(
                        "SELECT CAST({c} AS TEXT) AS v, COUNT(*) AS n FROM {t} WHERE {c} IS NOT NULL \
                         GROUP BY v ORDER BY n DESC, v ASC LIMIT 5",
                        c = quote_ident(&column),
                        t = quote_ident(&table)
                    ))
                    .map_err(sql_err)?;
                let top_values: Vec<TopValue> = top
                    .query_map([], |r| {
                        Ok(TopValue { value: r.get(0)?, frequency: r.get::<_, i64>(1)? as u64 })
                    })
                    .map_err(sql_err)?
                    .collect::<Result<_, _>>()
                    .map_err(sql_err)?;
                out.push(SchemaElement {
                    table: table.clone(),
                    column: Some(column),
                    data_type: if data_type.is_empty() { "ANY".into() } else { data_type },
                    top_values,
                    description: None,
                    intent_ids: IntentIds::new(),
                });
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Associates elements with intents whose keywords occur in their table or
/// column name.
pub fn tag_schema(records: &Records, elements: &mut [SchemaElement]) {
    for el in elements {
        let name = el.id().to_lowercase();
        for intent in &records.intents {
            if intent.keywords.iter().any(|k| !k.is_empty() && name.contains(&k.to_lowercase())) {
                el.intent_ids.insert(intent.id.clone());
            }
        }
    }
}

/// Replaces the schema elements of every table found in `db_id`.
pub fn ingest_schema(
    store: &KnowledgeStore,
    executor: &dyn SqlExecutor,
    db_id: &str,
    base: &str,
    actor: &str,
) -> Result<IngestReport, KnowledgeError> {
    let mut records = store.version(base)?.records.clone();
    let mut elements = read_schema(executor, db_id).map_err(KnowledgeError::Exec)?;
    tag_schema(&records, &mut elements);
    let tables: Vec<String> = elements.iter().map(|e| e.table.clone()).collect();
    records.schema.retain(|s| !tables.contains(&s.table));
    let added = elements.len();
    records.schema.extend(elements);
    let version_id = store.commit(
        base,
        records,
        actor,
        AuditAction::Ingest,
        Vec::new(),
        None,
        Some(format!("schema of {db_id}")),
    )?;
    Ok(IngestReport { version_id, added, skipped: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SteppingClock;
    use crate::exec::SqliteExecutor;
    use crate::fixtures::FIN_PERF_SQL;
    use crate::provider::{ScriptRule, ScriptedProvider};
    use std::sync::Arc;

    fn store() -> KnowledgeStore {
        KnowledgeStore::in_memory(Arc::new(SteppingClock::fixed()))
    }

    fn fin_perf_entry() -> QueryLogEntry {
        QueryLogEntry {
            id: Some("fin_perf".into()),
            nl_text: "Show me our 5 sports organisations with the best and worst QoQFP in Canada for Q2 2023.".into(),
            sql: FIN_PERF_SQL.into(),
            intents: vec!["financial performance".into()],
            db_id: Some("sports".into()),
        }
    }

    #[test]
    fn fin_perf_ingest_yields_financials_examples() {
        let s = store();
        let report = ingest_query_log(&s, &[fin_perf_entry()], "v0000", "t", Dialect::Sqlite).unwrap();
        let v = s.version(&report.version_id).unwrap();
        assert!(v
            .records
            .examples
            .iter()
            .any(|e| e.substatement.text.contains("FROM SPORTS_FINANCIALS")));
        assert!(v.records.examples.iter().all(|e| !e.nl_description.is_empty()));
        let where_clause = v
            .records
            .examples
            .iter()
            .find(|e| e.substatement.text.starts_with("...WHERE TO_CHAR(FIN_MONTH"))
            .unwrap();
        assert!(where_clause.nl_description.starts_with("filters rows of SPORTS_FINANCIALS by"));
        assert_eq!(v.records.sources.len(), 1);
        let fin = intent_id("financial performance");
        let view = s.get_view(&report.version_id, &[fin].into()).unwrap();
        assert_eq!(view.examples.len(), v.records.examples.len());
    }

    #[test]
    fn ingest_is_deduplicated() {
        let s = store();
        let first = ingest_query_log(&s, &[fin_perf_entry()], "v0000", "t", Dialect::Sqlite).unwrap();
        let second = ingest_query_log(&s, &[fin_perf_entry()], &first.version_id, "t", Dialect::Sqlite).unwrap();
        assert_eq!(second.added, 0);
        let a = s.version(&first.version_id).unwrap();
        let b = s.version(&second.version_id).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn empty_ingest_keeps_content() {
        let s = store();
        let first = ingest_query_log(&s, &[fin_perf_entry()], "v0000", "t", Dialect::Sqlite).unwrap();
        let empty = ingest_query_log(&s, &[], &first.version_id, "t", Dialect::Sqlite).unwrap();
        assert_ne!(empty.version_id, first.version_id);
        assert_eq!(
            s.version(&empty.version_id).unwrap().records,
            s.version(&first.version_id).unwrap().records
        );
    }

    #[test]
    fn syntax_errors_are_skipped() {
        let s = store();
        let bad = QueryLogEntry { sql: "SELEC 1".into(), ..fin_perf_entry() };
        let report = ingest_query_log(&s, &[bad, fin_perf_entry()], "v0000", "t", Dialect::Sqlite).unwrap();
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].index, 0);
        assert!(report.added > 0);
    }

    #[test]
    fn instruction_extraction_records_spans() {
        let s = store();
        let doc = "Finance handbook. Apply a -1 multiplier when calculating the change in performance metrics. Other text.";
        let provider = ScriptedProvider::strict(vec![ScriptRule::new(
            task::EXTRACT_INSTRUCTIONS,
            r#"{"instructions":[{"text":"Apply a -1 multiplier when calculating the change in performance metrics."}]}"#,
        )]);
        let report = ingest_instructions(&s, &[("handbook".into(), doc.into())], "v0000", &provider, "t").unwrap();
        let v = s.version(&report.version_id).unwrap();
        assert_eq!(v.records.instructions.len(), 1);
        let ins = &v.records.instructions[0];
        assert_eq!(ins.text, "Apply a -1 multiplier when calculating the change in performance metrics.");
        assert_eq!(ins.provenance.span, Some((18, ins.text.len() as u64)));
        assert_eq!(provider.calls().len(), 1);
    }

    #[test]
    fn instruction_ingest_aborts_on_provider_error() {
        let s = store();
        let provider = ScriptedProvider::strict(vec![]);
        let err = ingest_instructions(&s, &[("d".into(), "x".into())], "v0000", &provider, "t").unwrap_err();
        assert!(matches!(err, KnowledgeError::Provider(_)));
        assert_eq!(s.head(), "v0000");
    }

    #[test]
    fn schema_top_values_are_exact() {
        let s = store();
        let exec = SqliteExecutor::with_fixtures();
        let report = ingest_schema(&s, &exec, "sports", "v0000", "t").unwrap();
        let v = s.version(&report.version_id).unwrap();
        let country = v
            .records
            .schema
            .iter()
            .find(|e| e.id() == "SPORTS_FINANCIALS.COUNTRY")
            .unwrap();
        let oracle = exec
            .execute("sports", "SELECT COUNTRY, COUNT(*) FROM SPORTS_FINANCIALS GROUP BY COUNTRY ORDER BY 2 DESC, 1 LIMIT 5")
            .unwrap();
        assert_eq!(country.top_values.len(), oracle.rows.len());
        for (tv, row) in country.top_values.iter().zip(&oracle.rows) {
            assert_eq!(crate::exec::Cell::Text(tv.value.clone()), row[0]);
            assert_eq!(crate::exec::Cell::Int(tv.frequency as i64), row[1]);
        }
        assert!(v.records.schema.iter().all(|e| e.top_values.len() <= 5));
        assert!(v
            .records
            .schema
            .iter()
            .all(|e| e.top_values.windows(2).all(|w| w[0].frequency >= w[1].frequency)));
    }
}
