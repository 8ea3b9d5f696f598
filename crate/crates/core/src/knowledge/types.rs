use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::retrieval::embed::Embedding;
use crate::sqlkit::SubStatement;

pub type IntentIds = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub id: String,
    pub name: String,
    pub description: String,
    pub verified: bool,
    /// Seed words used to associate schema elements with the intent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
}

impl Intent {
    pub fn new(name: &str, description: &str, keywords: &[&str]) -> Self {
        Intent {
            id: intent_id(name),
            name: name.to_string(),
            description: description.to_string(),
            verified: true,
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
        }
    }
}

/// `intent:` plus the lowercased name with non-alphanumerics collapsed to `_`.
pub fn intent_id(name: &str) -> String {
    let mut slug = String::new();
    for c in name.trim().to_lowercase().chars() {
        if c.is_alphanumeric() {
            slug.push(c);
        } else if !slug.ends_with('_') {
            slug.push('_');
        }
    }
    format!("intent:{}", slug.trim_matches('_'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    QueryLog,
    Document,
    FeedbackEdit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRef {
    pub source_kind: SourceKind,
    pub source_id: String,
    /// Byte offset and length inside the source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(u64, u64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_id: Option<String>,
}

impl ProvenanceRef {
    pub fn query_log(source_id: &str) -> Self {
        ProvenanceRef {
            source_kind: SourceKind::QueryLog,
            source_id: source_id.to_string(),
            span: None,
            feedback_id: None,
        }
    }

    pub fn document(doc_id: &str, span: Option<(u64, u64)>) -> Self {
        ProvenanceRef {
            source_kind: SourceKind::Document,
            source_id: doc_id.to_string(),
            span,
            feedback_id: None,
        }
    }

    pub fn feedback(edit_id: &str, feedback_id: &str) -> Self {
        ProvenanceRef {
            source_kind: SourceKind::FeedbackEdit,
            source_id: edit_id.to_string(),
            span: None,
            feedback_id: Some(feedback_id.to_string()),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.feedback_id.is_some() == (self.source_kind == SourceKind::FeedbackEdit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub substatement: SubStatement,
    pub nl_description: String,
    pub intent_ids: IntentIds,
    pub provenance: ProvenanceRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_cache: Option<Embedding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionScope {
    Generation,
    RetrievalHint,
}

/// Retrieval operators a hint can attach to.
pub const HINT_OPERATORS: &[&str] = &[
    "reformulate",
    "classify_intents",
    "select_examples",
    "select_instructions",
    "link_schema",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql_fragment: Option<String>,
    pub scope: InstructionScope,
    /// Operator a retrieval hint attaches to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    pub intent_ids: IntentIds,
    pub provenance: ProvenanceRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_cache: Option<Embedding>,
}

/// Instruction ids hash the whitespace-collapsed text.
pub fn instruction_id(text: &str) -> String {
    let key = text.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("ins_{}", &short_hash(key.as_bytes())[..16])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopValue {
    pub value: String,
    pub frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaElement {
    pub table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    pub data_type: String,
    pub top_values: Vec<TopValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub intent_ids: IntentIds,
}

impl SchemaElement {
    /// `TABLE` or `TABLE.COLUMN`.
    pub fn id(&self) -> String {
        match &self.column {
            Some(c) => format!("{}.{}", self.table, c),
            None => self.table.clone(),
        }
    }
}

/// A whole ingested query, kept so examples can be rendered undecomposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceQuery {
    pub id: String,
    pub nl_text: String,
    pub sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_id: Option<String>,
    pub intent_ids: IntentIds,
    pub provenance: ProvenanceRef,
}

/// The record collections of one version, each sorted by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Records {
    pub intents: Vec<Intent>,
    pub examples: Vec<ExampleRecord>,
    pub instructions: Vec<InstructionRecord>,
    pub schema: Vec<SchemaElement>,
    #[serde(default)]
    pub sources: Vec<SourceQuery>,
}

impl Records {
    pub fn sort(&mut self) {
        self.intents.sort_by(|a, b| a.id.cmp(&b.id));
        self.examples.sort_by(|a, b| a.id.cmp(&b.id));
        self.instructions.sort_by(|a, b| a.id.cmp(&b.id));
        self.schema.sort_by_key(|s| s.id());
        self.sources.sort_by(|a, b| a.id.cmp(&b.id));
    }

    pub fn example(&self, id: &str) -> Option<&ExampleRecord> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn instruction(&self, id: &str) -> Option<&InstructionRecord> {
        self.instructions.iter().find(|i| i.id == id)
    }

    pub fn intent_by_name(&self, name: &str) -> Option<&Intent> {
        self.intents.iter().find(|i| i.name.eq_ignore_ascii_case(name.trim()))
    }

    pub fn source(&self, id: &str) -> Option<&SourceQuery> {
        self.sources.iter().find(|s| s.id == id)
    }

    pub fn retrieval_hints(&self) -> impl Iterator<Item = &InstructionRecord> {
        self.instructions.iter().filter(|i| i.scope == InstructionScope::RetrievalHint)
    }

    /// Records whose intents intersect `intents`, ordered by id.
    pub fn view(&self, intents: &IntentIds) -> KnowledgeView {
        let hit = |ids: &IntentIds| !ids.is_disjoint(intents);
        KnowledgeView {
            examples: self.examples.iter().filter(|e| hit(&e.intent_ids)).cloned().collect(),
            instructions: self.instructions.iter().filter(|i| hit(&i.intent_ids)).cloned().collect(),
            schema: self.schema.iter().filter(|s| hit(&s.intent_ids)).cloned().collect(),
        }
    }

    pub fn all_intent_ids(&self) -> IntentIds {
        self.intents.iter().map(|i| i.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeView {
    pub examples: Vec<ExampleRecord>,
    pub instructions: Vec<InstructionRecord>,
    pub schema: Vec<SchemaElement>,
}

impl KnowledgeView {
    /// Canonical JSON bytes, used for byte-exact view comparison.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("views serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeSetVersion {
    pub version_id: String,
    pub parent_id: Option<String>,
    pub created_at: DateTime<Utc>,
    pub author: String,
    pub records: Records,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    Ingest,
    EditMerged,
    Revert,
    DirectEdit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub actor: String,
    pub action: AuditAction,
    pub edit_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_id: Option<String>,
    pub resulting_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of any serializable record.
pub fn content_hash<T: Serialize>(record: &T) -> String {
    short_hash(&serde_json::to_vec(record).expect("records serialize"))
}
