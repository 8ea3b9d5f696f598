//! Versioned knowledge set: intents, decomposed examples, instructions and
//! schema elements, with provenance, overlays for staged edits, merges,
//! reverts and an append-only audit log.

mod describe;
pub mod edit;
pub mod ingest;
mod store;
pub mod types;

pub use describe::describe;
pub use edit::{apply_edits, current_content, Edit, EditKind, EditStatus, RecordContent, TargetKind};
pub use ingest::{
    ingest_instructions, ingest_intents, ingest_query_log, ingest_schema, read_schema, tag_schema,
    IngestReport, IntentSpec, QueryLogEntry, SkippedItem,
};
pub use store::{AuditFilter, KnowledgeSnapshot, KnowledgeStore, VersionSummary, ROOT_VERSION};
pub use types::*;

use crate::exec::ExecError;
use crate::provider::ProviderError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KnowledgeError {
    #[error("unknown version `{0}`")]
    UnknownVersion(String),
    #[error("edit {edit_id} is stale: record {target_id} changed since the edit was generated")]
    StaleEdit { edit_id: String, target_id: String },
    #[error("edit {0} is not approved")]
    NotApproved(String),
    #[error("edit {edit_id} cannot move from {from:?} to {to:?}")]
    IllegalTransition { edit_id: String, from: EditStatus, to: EditStatus },
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("record {0} already exists")]
    DuplicateRecord(String),
    #[error("storage error: {0}")]
    Io(String),
    #[error("corrupt knowledge store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Exec(ExecError),
}
