use std::collections::{BTreeMap, BTreeSet};

use super::embed::{cosine, embed_text};
use super::{sort_ranked, RetrievalConfig, Scored};
use crate::knowledge::{ExampleRecord, InstructionRecord, Records, SchemaElement};
use crate::provider::{ask, task, ChatProvider};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SchemaLinking {
    pub elements: Vec<Scored<SchemaElement>>,
    /// Valid `TABLE.COLUMN` or `TABLE` names the provider proposed.
    pub proposals: Vec<String>,
    pub notes: Vec<String>,
}

/// Text a column is embedded from: names, description and top values.
pub fn schema_key(el: &SchemaElement) -> String {
    let mut key = format!("{} {}", el.table, el.column.as_deref().unwrap_or(""));
    if let Some(d) = &el.description {
        key.push(' ');
        key.push_str(d);
    }
    for tv in &el.top_values {
        key.push(' ');
        key.push_str(&tv.value);
    }
    key
}

const LINK_SYSTEM: &str = "Pick the tables and columns needed to answer the question. \
Reply with a JSON array of \"TABLE.COLUMN\" names taken from the catalog.";

fn catalog(records: &Records) -> String {
    records
        .schema
        .iter()
        .filter(|e| e.column.is_some())
        .map(|e| format!("{} {}", e.id(), e.data_type))
        .collect::<Vec<_>>()
        .join("\n")
}

fn proposal_tokens(reply: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for token in reply.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.')) {
        let token = token.trim_matches('.');
        if !token.is_empty() && !out.iter().any(|t| t == token) {
            out.push(token.to_string());
        }
    }
    out
}

/// Operator 5. One provider call proposes elements; proposals plus
/// intent-tagged columns are re-ranked against the query and the selected
/// examples and instructions, keeping at least one column per proposed
/// table. With no usable proposals every column is a candidate.
pub fn link_schema(
    query: &str,
    intents: &BTreeSet<String>,
    examples: &[Scored<ExampleRecord>],
    instructions: &[Scored<InstructionRecord>],
    records: &Records,
    provider: &dyn ChatProvider,
    config: &RetrievalConfig,
    hints: &[&InstructionRecord],
) -> SchemaLinking {
    let columns: Vec<&SchemaElement> = records.schema.iter().filter(|e| e.column.is_some()).collect();
    let mut notes = Vec::new();
    if columns.is_empty() {
        return SchemaLinking::default();
    }
    let mut user = String::new();
    for h in hints {
        user.push_str(&format!("GUIDELINE: {}\n", h.text));
    }
    user.push_str(&format!("CATALOG:\n{}\nQUESTION: {query}", catalog(records)));
    let reply = match ask(provider, task::LINK_SCHEMA, LINK_SYSTEM, user) {
        Ok(r) => r,
        Err(e) => {
            notes.push(format!("schema proposal failed, ranking all columns: {e}"));
            String::new()
        }
    };

    let tables: BTreeSet<&str> = columns.iter().map(|c| c.table.as_str()).collect();
    let mut proposals = Vec::new();
    let mut proposed_tables: BTreeSet<String> = BTreeSet::new();
    let mut candidates: BTreeSet<String> = BTreeSet::new();
    for token in proposal_tokens(&reply) {
        if token.contains('.') {
            match columns.iter().find(|c| c.id().eq_ignore_ascii_case(&token)) {
                Some(c) => {
                    proposals.push(c.id());
                    proposed_tables.insert(c.table.clone());
                    candidates.insert(c.id());
                }
                None => notes.push(format!("dropped unknown schema element {token}")),
            }
        } else if let Some(t) = tables.iter().find(|t| t.eq_ignore_ascii_case(&token)) {
            proposals.push(t.to_string());
            proposed_tables.insert(t.to_string());
            candidates.extend(columns.iter().filter(|c| c.table == *t).map(|c| c.id()));
        }
    }
    if proposals.is_empty() {
        if !reply.trim().is_empty() {
            notes.push("no valid schema proposals, ranking all columns".to_string());
        }
        candidates.extend(columns.iter().map(|c| c.id()));
    } else {
        candidates.extend(
            columns
                .iter()
                .filter(|c| !c.intent_ids.is_disjoint(intents))
                .map(|c| c.id()),
        );
    }

    let mut key = query.to_string();
    for e in examples {
        key.push(' ');
        key.push_str(&super::example_key(&e.record));
    }
    for i in instructions {
        key.push(' ');
        key.push_str(&i.record.text);
    }
    let q = embed_text(&key);
    let mut ranked: Vec<(Scored<SchemaElement>, String)> = columns
        .iter()
        .filter(|c| candidates.contains(&c.id()))
        .map(|c| (Scored { record: (*c).clone(), score: cosine(&q, &embed_text(&schema_key(c))) }, c.id()))
        .collect();
    sort_ranked(&mut ranked);

    let cap = config.n_schema_columns;
    let mut keep: BTreeMap<usize, ()> = BTreeMap::new();
    let mut covered: BTreeSet<&str> = BTreeSet::new();
    for (i, (s, _)) in ranked.iter().enumerate() {
        if keep.len() >= cap {
            break;
        }
        if proposed_tables.contains(&s.record.table) && covered.insert(s.record.table.as_str()) {
            keep.insert(i, ());
        }
    }
    for i in 0..ranked.len() {
        if keep.len() >= cap {
            break;
        }
        keep.entry(i).or_insert(());
    }
    let elements = ranked
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains_key(i))
        .map(|(_, (s, _))| s)
        .collect();
    SchemaLinking { elements, proposals, notes }
}
