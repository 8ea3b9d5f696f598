use std::collections::BTreeSet;

use super::embed::{cosine, embed_text, Embedding};
use super::{sort_ranked, RetrievalConfig, Scored};
use crate::knowledge::{ExampleRecord, InstructionRecord, InstructionScope, Records};

/// Text an example is embedded from.
pub fn example_key(e: &ExampleRecord) -> String {
    format!("{} {}", e.nl_description, e.substatement.text)
}

/// Query text for instruction re-ranking: the query plus the descriptions
/// of the top five selected examples.
pub fn expansion_key(query: &str, examples: &[Scored<ExampleRecord>]) -> String {
    let mut key = query.to_string();
    for e in examples.iter().take(5) {
        key.push(' ');
        key.push_str(&e.record.nl_description);
    }
    key
}

/// Instruction pool key: the query alone.
pub fn instruction_query_key(query: &str) -> String {
    query.to_string()
}

fn example_embedding(e: &ExampleRecord) -> Embedding {
    e.embedding_cache.clone().unwrap_or_else(|| embed_text(&example_key(e)))
}

fn instruction_embedding(i: &InstructionRecord) -> Embedding {
    i.embedding_cache.clone().unwrap_or_else(|| embed_text(&i.text))
}

/// Candidate pool: records tagged with a selected intent plus the top `m`
/// by similarity over all records.
fn pool<'a, T>(
    items: &[&'a T],
    scores: &[f64],
    ids: impl Fn(&T) -> &str,
    tagged: impl Fn(&T) -> bool,
    m: usize,
) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids(items[a]).cmp(ids(items[b]))));
    let mut chosen: BTreeSet<usize> = order.into_iter().take(m).collect();
    chosen.extend((0..items.len()).filter(|&i| tagged(items[i])));
    chosen
}

/// Operator 3.
pub fn select_examples(
    query_key: &str,
    intents: &BTreeSet<String>,
    records: &Records,
    config: &RetrievalConfig,
) -> Vec<Scored<ExampleRecord>> {
    let q = embed_text(query_key);
    let items: Vec<&ExampleRecord> = records.examples.iter().collect();
    let scores: Vec<f64> = items.iter().map(|e| cosine(&q, &example_embedding(e))).collect();
    let chosen = pool(
        &items,
        &scores,
        |e| e.id.as_str(),
        |e| !e.intent_ids.is_disjoint(intents),
        config.pool_m,
    );
    let mut ranked: Vec<(Scored<ExampleRecord>, String)> = chosen
        .into_iter()
        .map(|i| (Scored { record: items[i].clone(), score: scores[i] }, items[i].id.clone()))
        .collect();
    sort_ranked(&mut ranked);
    ranked.truncate(config.n_examples);
    ranked.into_iter().map(|(s, _)| s).collect()
}

/// Operator 4. The pool is built from the query alone; the re-rank key is
/// expanded with the selected examples, so the order depends on them.
pub fn select_instructions(
    query_key: &str,
    intents: &BTreeSet<String>,
    selected_examples: &[Scored<ExampleRecord>],
    records: &Records,
    config: &RetrievalConfig,
) -> Vec<Scored<InstructionRecord>> {
    let items: Vec<&InstructionRecord> = records
        .instructions
        .iter()
        .filter(|i| i.scope == InstructionScope::Generation)
        .collect();
    let embeddings: Vec<Embedding> = items.iter().map(|i| instruction_embedding(i)).collect();
    let q = embed_text(&instruction_query_key(query_key));
    let pool_scores: Vec<f64> = embeddings.iter().map(|e| cosine(&q, e)).collect();
    let chosen = pool(
        &items,
        &pool_scores,
        |i| i.id.as_str(),
        |i| !i.intent_ids.is_disjoint(intents),
        config.pool_m,
    );
    let expanded = embed_text(&expansion_key(query_key, selected_examples));
    let mut ranked: Vec<(Scored<InstructionRecord>, String)> = chosen
        .into_iter()
        .map(|i| {
            (
                Scored { record: items[i].clone(), score: cosine(&expanded, &embeddings[i]) },
                items[i].id.clone(),
            )
        })
        .collect();
    sort_ranked(&mut ranked);
    ranked.truncate(config.n_instructions);
    ranked.into_iter().map(|(s, _)| s).collect()
}
