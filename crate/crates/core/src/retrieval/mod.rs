//! Inference operators that build the generation context: reformulation,
//! intent classification, example and instruction selection with context
//! expansion, schema linking, and prompt assembly.

pub mod embed;
mod prompt;
mod rank;
mod reformulate;
mod schema_link;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use embed::{cosine, embed_text, Embedding};
pub use prompt::{
    assemble_prompt, prompt_sections, render_prompt, section_body, PromptSections, SECTION_HEADERS,
};
pub use rank::{
    example_key, expansion_key, instruction_query_key, select_examples, select_instructions,
};
pub use reformulate::{canonical_fallback, classify_intents, reformulate, IntentSelection, ReformulatedQuery};
pub use schema_link::{link_schema, schema_key, SchemaLinking};

use crate::knowledge::{ExampleRecord, InstructionRecord, Records, SchemaElement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub theta: f64,
    pub pool_m: usize,
    pub n_examples: usize,
    pub n_instructions: usize,
    pub n_schema_columns: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            theta: 0.30,
            pool_m: 50,
            n_examples: 20,
            n_instructions: 10,
            n_schema_columns: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored<T> {
    pub record: T,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub intents: BTreeSet<String>,
    pub intent_scores: Vec<(String, f64)>,
    pub examples: Vec<Scored<ExampleRecord>>,
    pub instructions: Vec<Scored<InstructionRecord>>,
    pub schema: Vec<Scored<SchemaElement>>,
    pub retrieval_hints: Vec<InstructionRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RetrievedContext {
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty() && self.instructions.is_empty() && self.schema.is_empty()
    }
}

/// Retrieval hints attached to `operator`, ordered by id.
pub fn hints_for<'a>(records: &'a Records, operator: &str) -> Vec<&'a InstructionRecord> {
    records
        .retrieval_hints()
        .filter(|h| h.operator.as_deref() == Some(operator))
        .collect()
}

/// Sorts by score descending, then id ascending.
pub(crate) fn sort_ranked<T>(items: &mut [(Scored<T>, String)]) {
    items.sort_by(|(a, ida), (b, idb)| b.score.total_cmp(&a.score).then_with(|| ida.cmp(idb)));
}
