use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::types::{
    content_hash, instruction_id, ExampleRecord, InstructionRecord, InstructionScope,
    ProvenanceRef, Records, HINT_OPERATORS,
};
use super::KnowledgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Update,
    Insert,
    Delete,
    RetrievalHint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Example,
    Instruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditStatus {
    Recommended,
    Staged,
    Submitted,
    RegressionPassed,
    Approved,
    Merged,
    Rejected,
}

impl EditStatus {
    /// Forward steps in lifecycle order, unstaging, and rejection from any
    /// state before merge.
    pub fn can_become(self, next: EditStatus) -> bool {
        use EditStatus::*;
        matches!(
            (self, next),
            (Recommended, Staged)
                | (Staged, Recommended)
                | (Staged, Submitted)
                | (Submitted, RegressionPassed)
                | (RegressionPassed, Approved)
                | (Approved, Merged)
        ) || (next == Rejected && !matches!(self, Merged | Rejected))
    }

    pub fn as_str(self) -> &'static str {
        use EditStatus::*;
        match self {
            Recommended => "recommended",
            Staged => "staged",
            Submitted => "submitted",
            RegressionPassed => "regression_passed",
            Approved => "approved",
            Merged => "merged",
            Rejected => "rejected",
        }
    }
}

/// Full content of an example or instruction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordContent {
    Example(ExampleRecord),
    Instruction(InstructionRecord),
}

impl RecordContent {
    pub fn id(&self) -> &str {
        match self {
            RecordContent::Example(e) => &e.id,
            RecordContent::Instruction(i) => &i.id,
        }
    }

    pub fn target_kind(&self) -> TargetKind {
        match self {
            RecordContent::Example(_) => TargetKind::Example,
            RecordContent::Instruction(_) => TargetKind::Instruction,
        }
    }

    pub fn hash(&self) -> String {
        match self {
            RecordContent::Example(e) => content_hash(e),
            RecordContent::Instruction(i) => content_hash(i),
        }
    }

    /// Human-readable text: description plus fragment, or instruction text.
    pub fn summary(&self) -> String {
        match self {
            RecordContent::Example(e) => format!("{} {}", e.nl_description, e.substatement.text),
            RecordContent::Instruction(i) => match &i.sql_fragment {
                Some(f) => format!("{} ({f})", i.text),
                None => i.text.clone(),
            },
        }
    }
}

/// Looks up the current content of a record.
pub fn current_content(records: &Records, kind: TargetKind, id: &str) -> Option<RecordContent> {
    match kind {
        TargetKind::Example => records.example(id).cloned().map(RecordContent::Example),
        TargetKind::Instruction => records.instruction(id).cloned().map(RecordContent::Instruction),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub id: String,
    pub kind: EditKind,
    pub target_kind: TargetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before: Option<RecordContent>,
    /// Content hash of `before`, checked against the target at apply time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<RecordContent>,
    pub rationale: String,
    pub status: EditStatus,
    pub feedback_id: String,
    #[serde(default)]
    pub session_id: String,
    /// Feedback iteration that produced the edit, starting at 1.
    #[serde(default = "first_iteration")]
    pub iteration: u32,
    /// Set once a reviewer replaced the recommended content.
    #[serde(default)]
    pub revised: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
}

fn first_iteration() -> u32 {
    1
}

impl Edit {
    pub fn check_shape(&self) -> Result<(), String> {
        let needs_target = matches!(self.kind, EditKind::Update | EditKind::Delete);
        if needs_target && (self.target_id.is_none() || self.before_hash.is_none()) {
            return Err(format!("{:?} edit {} lacks target_id or before hash", self.kind, self.id));
        }
        if self.kind != EditKind::Delete && self.after.is_none() {
            return Err(format!("edit {} has no `after` content", self.id));
        }
        if self.kind == EditKind::Insert && self.target_id.is_some() {
            return Err(format!("insert edit {} names a target", self.id));
        }
        if let Some(after) = &self.after {
            if after.target_kind() != self.target_kind {
                return Err(format!("edit {} content does not match its target kind", self.id));
            }
        }
        if self.kind == EditKind::RetrievalHint {
            let Some(RecordContent::Instruction(hint)) = &self.after else {
                return Err(format!("retrieval hint {} must carry an instruction", self.id));
            };
            match hint.operator.as_deref() {
                Some(op) if HINT_OPERATORS.contains(&op) => {}
                other => {
                    return Err(format!("retrieval hint {} names unknown operator {other:?}", self.id))
                }
            }
        }
        Ok(())
    }

    pub fn transition(&mut self, next: EditStatus) -> Result<(), KnowledgeError> {
        if self.status == next {
            return Ok(());
        }
        if !self.status.can_become(next) {
            return Err(KnowledgeError::IllegalTransition {
                edit_id: self.id.clone(),
                from: self.status,
                to: next,
            });
        }
        self.status = next;
        Ok(())
    }
}

/// Applies edits in order to a copy of `records`. Shared by overlays and
/// merges so both produce the same content.
pub fn apply_edits(records: &Records, edits: &[Edit]) -> Result<Records, KnowledgeError> {
    let mut out = records.clone();
    for edit in edits {
        edit.check_shape().map_err(KnowledgeError::InvalidEdit)?;
        let provenance = ProvenanceRef::feedback(&edit.id, &edit.feedback_id);
        if let Some(target) = &edit.target_id {
            let current = current_content(&out, edit.target_kind, target).ok_or_else(|| {
                KnowledgeError::StaleEdit {
                    edit_id: edit.id.clone(),
                    target_id: target.clone(),
                }
            })?;
            if Some(current.hash()) != edit.before_hash {
                return Err(KnowledgeError::StaleEdit {
                    edit_id: edit.id.clone(),
                    target_id: target.clone(),
                });
            }
            remove(&mut out, edit.target_kind, target);
        }
        if let Some(after) = &edit.after {
            let record = prepare(after, edit.target_id.as_deref(), provenance, edit.kind);
            check_intents(&out, &record)?;
            if current_content(&out, record.target_kind(), record.id()).is_some() {
                return Err(KnowledgeError::DuplicateRecord(record.id().to_string()));
            }
            match record {
                RecordContent::Example(e) => out.examples.push(e),
                RecordContent::Instruction(i) => out.instructions.push(i),
            }
        }
    }
    out.sort();
    Ok(out)
}

fn remove(records: &mut Records, kind: TargetKind, id: &str) {
    match kind {
        TargetKind::Example => records.examples.retain(|e| e.id != id),
        TargetKind::Instruction => records.instructions.retain(|i| i.id != id),
    }
}

fn prepare(
    after: &RecordContent,
    target_id: Option<&str>,
    provenance: ProvenanceRef,
    kind: EditKind,
) -> RecordContent {
    match after.clone() {
        RecordContent::Example(mut e) => {
            e.substatement.refresh();
            e.id = match target_id {
                Some(t) => t.to_string(),
                None => e.substatement.id.clone(),
            };
            e.provenance = provenance;
            e.embedding_cache = None;
            RecordContent::Example(e)
        }
        RecordContent::Instruction(mut i) => {
            i.id = match target_id {
                Some(t) => t.to_string(),
                None => instruction_id(&i.text),
            };
            if kind == EditKind::RetrievalHint {
                i.scope = InstructionScope::RetrievalHint;
            }
            i.provenance = provenance;
            i.embedding_cache = None;
            RecordContent::Instruction(i)
        }
    }
}

fn check_intents(records: &Records, record: &RecordContent) -> Result<(), KnowledgeError> {
    let ids = match record {
        RecordContent::Example(e) => &e.intent_ids,
        RecordContent::Instruction(i) => &i.intent_ids,
    };
    match ids.iter().find(|id| !records.intents.iter().any(|i| &i.id == *id)) {
        Some(unknown) => Err(KnowledgeError::InvalidEdit(format!(
            "record {} references unknown intent {unknown}",
            record.id()
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [EditStatus; 7] = [
        EditStatus::Recommended,
        EditStatus::Staged,
        EditStatus::Submitted,
        EditStatus::RegressionPassed,
        EditStatus::Approved,
        EditStatus::Merged,
        EditStatus::Rejected,
    ];

    #[test]
    fn lifecycle_table() {
        use EditStatus::*;
        assert!(Recommended.can_become(Staged));
        assert!(Staged.can_become(Recommended));
        assert!(!Recommended.can_become(Submitted));
        assert!(!Submitted.can_become(Approved));
        assert!(Approved.can_become(Merged));
        assert!(Submitted.can_become(Rejected));
        assert!(!Merged.can_become(Rejected));
        assert!(!Rejected.can_become(Staged));
    }

    fn rank(s: EditStatus) -> usize {
        ALL.iter().position(|x| *x == s).unwrap()
    }

    proptest! {
        #[test]
        fn random_event_sequences_stay_legal(events in proptest::collection::vec(0usize..7, 0..40)) {
            let mut edit = Edit {
                id: "e".into(),
                kind: EditKind::Delete,
                target_kind: TargetKind::Example,
                target_id: Some("x".into()),
                before: None,
                before_hash: Some("h".into()),
                after: None,
                rationale: String::new(),
                status: EditStatus::Recommended,
                feedback_id: "f".into(),
                session_id: "s".into(),
                iteration: 1,
                revised: false,
                created_at: None,
            };
            let mut history = vec![edit.status];
            for e in events {
                let before = edit.status;
                if edit.transition(ALL[e]).is_ok() && edit.status != before {
                    history.push(edit.status);
                }
            }
            for pair in history.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                let forward = rank(b) == rank(a) + 1 && b != EditStatus::Rejected;
                let unstage = a == EditStatus::Staged && b == EditStatus::Recommended;
                let reject = b == EditStatus::Rejected && a != EditStatus::Merged;
                prop_assert!(forward || unstage || reject, "{:?} -> {:?}", a, b);
            }
            if let Some(pos) = history.iter().position(|s| matches!(s, EditStatus::Merged | EditStatus::Rejected)) {
                prop_assert_eq!(pos, history.len() - 1);
            }
        }
    }
}
