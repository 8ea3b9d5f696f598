//! Feedback sessions: the four edit-recommendation operators, the staged
//! edit lifecycle, regression gating and approval.

mod operators;
mod regression;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use operators::{
    complete_draft, context_listing, edit_id, expand_feedback, generate_edits, generate_targets, plan_edits,
    DraftContent, EditDraft, EditOrigin, EditTarget, Expansion,
};
pub use regression::{
    load_golden, regression_report, verdict_of, GoldenCase, GoldenError, RegressionCase, RegressionReport,
    RegressionRuntime, Verdict,
};

use crate::exec::SqlExecutor;
use crate::generation::{generate, CotPlan, GenerationConfig, GenerationError, GenerationTrace};
use crate::knowledge::{
    current_content, AuditAction, Edit, EditStatus, KnowledgeError, KnowledgeSnapshot, KnowledgeStore,
    RecordContent,
};
use crate::provider::ChatProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Submitted,
    Merged,
    Abandoned,
}

/// One regeneration: the edits staged at the time and the trace produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub staged_edit_ids: Vec<String>,
    pub trace_id: String,
}

/// One piece of feedback and what the operators made of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRound {
    pub text: String,
    pub trace_id: String,
    pub targets: Vec<EditTarget>,
    pub expansions: Vec<Expansion>,
    pub plan: Option<CotPlan>,
    pub edit_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSession {
    pub id: String,
    pub trace_id: String,
    pub query: String,
    pub db_id: String,
    pub base_version: String,
    pub feedback_text: String,
    pub created_at: DateTime<Utc>,
    /// Opened from the library rather than from a generation.
    #[serde(default)]
    pub direct: bool,
    pub rounds: Vec<FeedbackRound>,
    pub iterations: Vec<Iteration>,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_versions: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown edit `{0}`")]
    UnknownEdit(String),
    #[error("edit `{edit_id}` does not belong to session `{session_id}`")]
    ForeignEdit { edit_id: String, session_id: String },
    #[error("session `{id}` is {status:?}")]
    SessionClosed { id: String, status: SessionStatus },
    #[error("nothing is staged")]
    NothingStaged,
    #[error("edit `{0}` has not passed regression")]
    NotRegressionPassed(String),
    #[error("feedback text is empty")]
    EmptyFeedback,
    #[error("trace `{0}` has no retrieved context")]
    NoContext(String),
    #[error("edit `{edit_id}` is {status:?}; expected {expected}")]
    WrongStatus { edit_id: String, status: EditStatus, expected: &'static str },
    #[error("malformed edit: {0}")]
    MalformedEdit(String),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("session storage: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct FlowState {
    sessions: BTreeMap<String, FeedbackSession>,
    edits: BTreeMap<String, Edit>,
    next_session: u64,
}

/// Edits applied in a session's overlay.
fn in_flight(status: EditStatus) -> bool {
    matches!(
        status,
        EditStatus::Staged | EditStatus::Submitted | EditStatus::RegressionPassed | EditStatus::Approved
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditMetrics {
    pub recommended: usize,
    pub accepted_as_is: usize,
    pub accepted_after_iteration: usize,
    pub accepted_as_is_rate: f64,
    pub accepted_after_iteration_rate: f64,
}

/// Result of a submit call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub session_id: String,
    pub submitted_edit_ids: Vec<String>,
    /// True when the edits were already submitted by an earlier call.
    pub repeated: bool,
}

pub struct EditFlow {
    store: Arc<KnowledgeStore>,
    state: Mutex<FlowState>,
    path: Option<PathBuf>,
}

impl EditFlow {
    pub fn new(store: Arc<KnowledgeStore>) -> Self {
        EditFlow { store, state: Mutex::new(FlowState::default()), path: None }
    }

    /// Sessions persisted as one JSON document at `path`.
    pub fn open(store: Arc<KnowledgeStore>, path: &Path) -> Result<Self, FlowError> {
        let state = if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| FlowError::Io(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| FlowError::Io(e.to_string()))?
        } else {
            FlowState::default()
        };
        Ok(EditFlow { store, state: Mutex::new(state), path: Some(path.to_path_buf()) })
    }

    pub fn store(&self) -> &Arc<KnowledgeStore> {
        &self.store
    }

    fn lock(&self) -> MutexGuard<'_, FlowState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn save(&self, state: &FlowState) -> Result<(), FlowError> {
        let Some(path) = &self.path else { return Ok(()) };
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec_pretty(state).map_err(|e| FlowError::Io(e.to_string()))?;
        std::fs::write(&tmp, bytes).map_err(|e| FlowError::Io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| FlowError::Io(e.to_string()))
    }

    pub fn session(&self, id: &str) -> Result<FeedbackSession, FlowError> {
        self.lock().sessions.get(id).cloned().ok_or_else(|| FlowError::UnknownSession(id.to_string()))
    }

    pub fn sessions(&self) -> Vec<FeedbackSession> {
        self.lock().sessions.values().cloned().collect()
    }

    pub fn edit(&self, id: &str) -> Result<Edit, FlowError> {
        self.lock().edits.get(id).cloned().ok_or_else(|| FlowError::UnknownEdit(id.to_string()))
    }

    /// Edits of a session in the order they were recommended.
    pub fn session_edits(&self, session_id: &str) -> Result<Vec<Edit>, FlowError> {
        let state = self.lock();
        session_edits(&state, session_id)
    }

    /// Runs the four operators on feedback about `trace` and opens a
    /// session holding the recommended edits.
    pub fn open_session(
        &self,
        trace: &GenerationTrace,
        feedback: &str,
        provider: &dyn ChatProvider,
    ) -> Result<(FeedbackSession, Vec<Edit>), FlowError> {
        if feedback.trim().is_empty() {
            return Err(FlowError::EmptyFeedback);
        }
        if trace.context.is_empty() {
            return Err(FlowError::NoContext(trace.request_id.clone()));
        }
        let base = if self.store.version(&trace.knowledge_label).is_ok() {
            trace.knowledge_label.clone()
        } else {
            self.store.head()
        };
        let id = {
            let mut state = self.lock();
            state.next_session += 1;
            format!("fb_{:04}", state.next_session)
        };
        let session = FeedbackSession {
            id: id.clone(),
            trace_id: trace.request_id.clone(),
            query: trace.query.clone(),
            db_id: trace.db_id.clone(),
            base_version: base,
            feedback_text: feedback.trim().to_string(),
            created_at: self.store.clock().now(),
            direct: false,
            rounds: Vec::new(),
            iterations: Vec::new(),
            status: SessionStatus::Open,
            regression: None,
            merged_versions: Vec::new(),
        };
        let (round, edits) = self.run_operators(&session, trace, feedback.trim(), provider, 1)?;
        let mut session = session;
        session.rounds.push(round);
        let mut state = self.lock();
        for e in &edits {
            state.edits.insert(e.id.clone(), e.clone());
        }
        state.sessions.insert(id, session.clone());
        self.save(&state)?;
        Ok((session, edits))
    }

    /// Further feedback on an open session, usually about a regenerated
    /// trace. New edits carry the next iteration number.
    pub fn add_feedback(
        &self,
        session_id: &str,
        trace: &GenerationTrace,
        feedback: &str,
        provider: &dyn ChatProvider,
    ) -> Result<Vec<Edit>, FlowError> {
        if feedback.trim().is_empty() {
            return Err(FlowError::EmptyFeedback);
        }
        let session = self.open_session_state(session_id)?;
        let iteration = session.rounds.len() as u32 + 1;
        let (round, edits) = self.run_operators(&session, trace, feedback.trim(), provider, iteration)?;
        let mut state = self.lock();
        for e in &edits {
            state.edits.insert(e.id.clone(), e.clone());
        }
        state.sessions.get_mut(session_id).expect("session exists").rounds.push(round);
        self.save(&state)?;
        Ok(edits)
    }

    fn open_session_state(&self, session_id: &str) -> Result<FeedbackSession, FlowError> {
        let session = self.session(session_id)?;
        if session.status != SessionStatus::Open {
            return Err(FlowError::SessionClosed { id: session.id, status: session.status });
        }
        Ok(session)
    }

    fn run_operators(
        &self,
        session: &FeedbackSession,
        trace: &GenerationTrace,
        feedback: &str,
        provider: &dyn ChatProvider,
        iteration: u32,
    ) -> Result<(FeedbackRound, Vec<Edit>), FlowError> {
        let records = self.store.version(&session.base_version)?.records.clone();
        let (targets, mut notes) = generate_targets(feedback, trace, provider);
        let mut round = FeedbackRound {
            text: feedback.to_string(),
            trace_id: trace.request_id.clone(),
            targets: targets.clone(),
            expansions: Vec::new(),
            plan: None,
            edit_ids: Vec::new(),
            notes: Vec::new(),
        };
        if targets.is_empty() {
            round.notes = notes;
            return Ok((round, Vec::new()));
        }
        let (expansions, n) = expand_feedback(feedback, &targets, &records, provider);
        notes.extend(n);
        round.expansions = expansions.clone();
        if expansions.is_empty() {
            round.notes = notes;
            return Ok((round, Vec::new()));
        }
        let plan = plan_edits(feedback, &expansions, &records, provider)?;
        let origin = EditOrigin {
            feedback_id: &session.id,
            session_id: &session.id,
            iteration,
            created_at: self.store.clock().now(),
        };
        let (edits, n) = generate_edits(feedback, &plan, &expansions, &records, provider, &origin)?;
        notes.extend(n);
        round.plan = Some(plan);
        round.edit_ids = edits.iter().map(|e| e.id.clone()).collect();
        round.notes = notes;
        Ok((round, edits))
    }

    /// Copy-on-write view of the session's base with its in-flight edits.
    pub fn overlay(&self, session_id: &str) -> Result<KnowledgeSnapshot, FlowError> {
        let state = self.lock();
        let session = state.sessions.get(session_id).ok_or_else(|| FlowError::UnknownSession(session_id.into()))?;
        let edits: Vec<Edit> =
            session_edits(&state, session_id)?.into_iter().filter(|e| in_flight(e.status)).collect();
        Ok(self.store.overlay(&session.base_version, &edits)?)
    }

    /// Stages edits, replacing their content with any revision first. The
    /// overlay is checked before anything changes.
    pub fn stage(
        &self,
        session_id: &str,
        edit_ids: &[String],
        revisions: &BTreeMap<String, DraftContent>,
    ) -> Result<KnowledgeSnapshot, FlowError> {
        let mut state = self.lock();
        let session = state
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| FlowError::UnknownSession(session_id.into()))?;
        if session.status != SessionStatus::Open {
            return Err(FlowError::SessionClosed { id: session.id, status: session.status });
        }
        let records = self.store.version(&session.base_version)?.records.clone();
        let mut updated: Vec<Edit> = Vec::new();
        for id in edit_ids {
            let mut edit = owned_edit(&state, session_id, id)?;
            if !matches!(edit.status, EditStatus::Recommended | EditStatus::Staged) {
                return Err(FlowError::WrongStatus { edit_id: id.clone(), status: edit.status, expected: "recommended" });
            }
            if let Some(rev) = revisions.get(id) {
                let revised = revise(&edit, rev, &records, &session)?;
                if revised != edit.after {
                    edit.after = revised;
                    edit.revised = true;
                }
            }
            edit.transition(EditStatus::Staged)?;
            updated.push(edit);
        }
        let head = self.store.version(&self.store.head())?;
        for edit in &updated {
            if let Some(target) = &edit.target_id {
                let current = current_content(&head.records, edit.target_kind, target).map(|c| c.hash());
                if current != edit.before_hash {
                    return Err(KnowledgeError::StaleEdit { edit_id: edit.id.clone(), target_id: target.clone() }.into());
                }
            }
        }
        let mut tentative = state.clone();
        for e in &updated {
            tentative.edits.insert(e.id.clone(), e.clone());
        }
        let staged: Vec<Edit> =
            session_edits(&tentative, session_id)?.into_iter().filter(|e| in_flight(e.status)).collect();
        let snapshot = self.store.overlay(&session.base_version, &staged)?;
        *state = tentative;
        self.save(&state)?;
        Ok(snapshot)
    }

    pub fn unstage(&self, session_id: &str, edit_ids: &[String]) -> Result<KnowledgeSnapshot, FlowError> {
        {
            let mut state = self.lock();
            let session = state.sessions.get(session_id).ok_or_else(|| FlowError::UnknownSession(session_id.into()))?;
            if session.status != SessionStatus::Open {
                return Err(FlowError::SessionClosed { id: session.id.clone(), status: session.status });
            }
            let mut updated = Vec::new();
            for id in edit_ids {
                let mut edit = owned_edit(&state, session_id, id)?;
                edit.transition(EditStatus::Recommended)?;
                updated.push(edit);
            }
            for e in updated {
                state.edits.insert(e.id.clone(), e);
            }
            self.save(&state)?;
        }
        self.overlay(session_id)
    }

    /// Generates the session's query against its overlay and records the
    /// iteration.
    pub fn regenerate(
        &self,
        session_id: &str,
        provider: &dyn ChatProvider,
        executor: &dyn SqlExecutor,
        config: &GenerationConfig,
    ) -> Result<GenerationTrace, FlowError> {
        let session = self.session(session_id)?;
        if matches!(session.status, SessionStatus::Merged | SessionStatus::Abandoned) {
            return Err(FlowError::SessionClosed { id: session.id, status: session.status });
        }
        let overlay = self.overlay(session_id)?;
        let trace = generate(&session.query, &session.db_id, &overlay, provider, executor, config);
        let mut state = self.lock();
        state.sessions.get_mut(session_id).expect("session exists").iterations.push(Iteration {
            staged_edit_ids: overlay.edit_ids.clone(),
            trace_id: trace.request_id.clone(),
        });
        self.save(&state)?;
        Ok(trace)
    }

    /// Moves staged edits to submitted. Repeating the call is harmless.
    pub fn submit(&self, session_id: &str) -> Result<Submission, FlowError> {
        let mut state = self.lock();
        let session = state.sessions.get(session_id).cloned().ok_or_else(|| FlowError::UnknownSession(session_id.into()))?;
        let edits = session_edits(&state, session_id)?;
        let staged: Vec<Edit> = edits.iter().filter(|e| e.status == EditStatus::Staged).cloned().collect();
        if staged.is_empty() {
            let already: Vec<String> = edits
                .iter()
                .filter(|e| session.status == SessionStatus::Submitted && e.status != EditStatus::Recommended)
                .map(|e| e.id.clone())
                .collect();
            if already.is_empty() {
                return Err(FlowError::NothingStaged);
            }
            return Ok(Submission { session_id: session_id.into(), submitted_edit_ids: already, repeated: true });
        }
        if session.status != SessionStatus::Open {
            return Err(FlowError::SessionClosed { id: session.id, status: session.status });
        }
        let mut ids = Vec::new();
        for mut e in staged {
            e.transition(EditStatus::Submitted)?;
            ids.push(e.id.clone());
            state.edits.insert(e.id.clone(), e);
        }
        state.sessions.get_mut(session_id).expect("session exists").status = SessionStatus::Submitted;
        self.save(&state)?;
        Ok(Submission { session_id: session_id.into(), submitted_edit_ids: ids, repeated: false })
    }

    /// Runs the golden cases against head and head plus the submitted
    /// edits. Edits pass or are rejected together.
    #[allow(clippy::too_many_arguments)]
    pub fn run_regression(
        &self,
        session_id: &str,
        golden: &[GoldenCase],
        provider: &dyn ChatProvider,
        executor: &dyn SqlExecutor,
        config: &GenerationConfig,
        workers: usize,
    ) -> Result<RegressionReport, FlowError> {
        let edits: Vec<Edit> = self
            .session_edits(session_id)?
            .into_iter()
            .filter(|e| matches!(e.status, EditStatus::Submitted | EditStatus::RegressionPassed))
            .collect();
        if edits.is_empty() {
            return Err(FlowError::NothingStaged);
        }
        let head = self.store.head();
        let base = self.store.snapshot(&head)?;
        let overlay = self.store.overlay(&head, &edits)?;
        let clock = self.store.clock().clone();
        let report = regression_report(&base, &overlay, golden, provider, executor, config, workers, || clock.now());
        let next = match report.verdict {
            Verdict::Pass => EditStatus::RegressionPassed,
            Verdict::Fail => EditStatus::Rejected,
        };
        let mut state = self.lock();
        for e in &edits {
            let edit = state.edits.get_mut(&e.id).expect("edit exists");
            edit.transition(next)?;
        }
        state.sessions.get_mut(session_id).expect("session exists").regression = Some(report.clone());
        self.save(&state)?;
        Ok(report)
    }

    /// Approves and merges one edit onto head.
    pub fn approve_edit(&self, edit_id: &str, approver: &str) -> Result<String, FlowError> {
        let edit = self.edit(edit_id)?;
        self.approve(&edit.session_id, &[edit_id.to_string()], approver)
    }

    /// Approves and merges every regression-passed edit of a session as
    /// one version.
    pub fn approve_session(&self, session_id: &str, approver: &str) -> Result<String, FlowError> {
        let ids: Vec<String> = self
            .session_edits(session_id)?
            .into_iter()
            .filter(|e| e.status != EditStatus::Recommended && e.status != EditStatus::Merged)
            .map(|e| e.id)
            .collect();
        if ids.is_empty() {
            return Err(FlowError::NothingStaged);
        }
        self.approve(session_id, &ids, approver)
    }

    fn approve(&self, session_id: &str, edit_ids: &[String], approver: &str) -> Result<String, FlowError> {
        let mut state = self.lock();
        let session = state.sessions.get(session_id).cloned().ok_or_else(|| FlowError::UnknownSession(session_id.into()))?;
        let mut approved = Vec::new();
        for id in edit_ids {
            let mut edit = owned_edit(&state, session_id, id)?;
            if edit.status != EditStatus::RegressionPassed {
                return Err(FlowError::NotRegressionPassed(id.clone()));
            }
            edit.transition(EditStatus::Approved)?;
            approved.push(edit);
        }
        let action = if session.direct { AuditAction::DirectEdit } else { AuditAction::EditMerged };
        let head = self.store.head();
        let version = self.store.merge(&head, &approved, approver, Some(&session.id), action)?;
        for mut e in approved {
            e.transition(EditStatus::Merged)?;
            state.edits.insert(e.id.clone(), e);
        }
        let remaining = session_edits(&state, session_id)?.iter().any(|e| in_flight(e.status));
        let s = state.sessions.get_mut(session_id).expect("session exists");
        s.merged_versions.push(version.clone());
        if !remaining {
            s.status = SessionStatus::Merged;
        }
        self.save(&state)?;
        Ok(version)
    }

    pub fn abandon(&self, session_id: &str) -> Result<(), FlowError> {
        let mut state = self.lock();
        let s = state.sessions.get_mut(session_id).ok_or_else(|| FlowError::UnknownSession(session_id.into()))?;
        if s.status == SessionStatus::Merged {
            return Err(FlowError::SessionClosed { id: s.id.clone(), status: s.status });
        }
        s.status = SessionStatus::Abandoned;
        self.save(&state)
    }

    /// A library edit: a single-edit session submitted straight away, so it
    /// goes through the same regression gate and approval.
    pub fn direct_edit(&self, draft: &EditDraft, actor: &str) -> Result<(FeedbackSession, Edit), FlowError> {
        let head = self.store.head();
        let records = self.store.version(&head)?.records.clone();
        let id = {
            let mut state = self.lock();
            state.next_session += 1;
            format!("fb_{:04}", state.next_session)
        };
        let now = self.store.clock().now();
        let origin = EditOrigin { feedback_id: &id, session_id: &id, iteration: 1, created_at: now };
        let mut notes = Vec::new();
        let mut edit = complete_draft(draft, 0, &records, &origin, &mut notes).map_err(FlowError::MalformedEdit)?;
        self.store.overlay(&head, std::slice::from_ref(&edit))?;
        edit.transition(EditStatus::Staged)?;
        edit.transition(EditStatus::Submitted)?;
        let session = FeedbackSession {
            id: id.clone(),
            trace_id: String::new(),
            query: String::new(),
            db_id: String::new(),
            base_version: head,
            feedback_text: format!("direct edit by {actor}"),
            created_at: now,
            direct: true,
            rounds: vec![FeedbackRound {
                text: draft.rationale.clone(),
                trace_id: String::new(),
                targets: Vec::new(),
                expansions: Vec::new(),
                plan: None,
                edit_ids: vec![edit.id.clone()],
                notes,
            }],
            iterations: Vec::new(),
            status: SessionStatus::Submitted,
            regression: None,
            merged_versions: Vec::new(),
        };
        let mut state = self.lock();
        state.edits.insert(edit.id.clone(), edit.clone());
        state.sessions.insert(id, session.clone());
        self.save(&state)?;
        Ok((session, edit))
    }

    /// Acceptance of recommended edits created within `[from, to)`.
    pub fn edit_metrics(&self, from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> EditMetrics {
        let state = self.lock();
        let sessions = &state.sessions;
        let in_period = |e: &&Edit| {
            let at = e.created_at;
            from.is_none_or(|f| at.is_some_and(|a| a >= f)) && to.is_none_or(|t| at.is_some_and(|a| a < t))
        };
        let edits: Vec<&Edit> = state
            .edits
            .values()
            .filter(|e| sessions.get(&e.session_id).is_some_and(|s| !s.direct))
            .filter(in_period)
            .collect();
        let merged = edits.iter().filter(|e| e.status == EditStatus::Merged);
        let after_iteration = merged.clone().filter(|e| e.revised || e.iteration >= 2).count();
        let as_is = merged.count() - after_iteration;
        let rate = |n: usize| if edits.is_empty() { 0.0 } else { n as f64 / edits.len() as f64 };
        EditMetrics {
            recommended: edits.len(),
            accepted_as_is: as_is,
            accepted_after_iteration: after_iteration,
            accepted_as_is_rate: rate(as_is),
            accepted_after_iteration_rate: rate(after_iteration),
        }
    }
}

fn session_edits(state: &FlowState, session_id: &str) -> Result<Vec<Edit>, FlowError> {
    let session = state.sessions.get(session_id).ok_or_else(|| FlowError::UnknownSession(session_id.into()))?;
    Ok(session
        .rounds
        .iter()
        .flat_map(|r| r.edit_ids.iter())
        .filter_map(|id| state.edits.get(id).cloned())
        .collect())
}

fn owned_edit(state: &FlowState, session_id: &str, edit_id: &str) -> Result<Edit, FlowError> {
    let edit = state.edits.get(edit_id).cloned().ok_or_else(|| FlowError::UnknownEdit(edit_id.into()))?;
    if edit.session_id != session_id {
        return Err(FlowError::ForeignEdit { edit_id: edit_id.into(), session_id: session_id.into() });
    }
    Ok(edit)
}

/// The edit's `after` with a reviewer revision applied.
fn revise(
    edit: &Edit,
    revision: &DraftContent,
    records: &crate::knowledge::Records,
    session: &FeedbackSession,
) -> Result<Option<RecordContent>, FlowError> {
    let draft = EditDraft {
        kind: Some(match edit.kind {
            crate::knowledge::EditKind::Update => "update",
            crate::knowledge::EditKind::Insert => "insert",
            crate::knowledge::EditKind::Delete => "delete",
            crate::knowledge::EditKind::RetrievalHint => "retrieval_hint",
        }
        .into()),
        target_kind: Some(match edit.target_kind {
            crate::knowledge::TargetKind::Example => "example",
            crate::knowledge::TargetKind::Instruction => "instruction",
        }
        .into()),
        target_id: edit.target_id.clone(),
        rationale: edit.rationale.clone(),
        after: Some(revision.clone()),
    };
    // Revise on top of the current `after`, not the base record.
    let mut scratch = records.clone();
    if let (Some(after), Some(target)) = (&edit.after, &edit.target_id) {
        match after {
            RecordContent::Example(e) => {
                if let Some(slot) = scratch.examples.iter_mut().find(|x| &x.id == target) {
                    *slot = crate::knowledge::ExampleRecord { id: target.clone(), ..e.clone() };
                }
            }
            RecordContent::Instruction(i) => {
                if let Some(slot) = scratch.instructions.iter_mut().find(|x| &x.id == target) {
                    *slot = crate::knowledge::InstructionRecord { id: target.clone(), ..i.clone() };
                }
            }
        }
    }
    let origin = EditOrigin {
        feedback_id: &edit.feedback_id,
        session_id: &session.id,
        iteration: edit.iteration,
        created_at: edit.created_at.unwrap_or(session.created_at),
    };
    let mut notes = Vec::new();
    let revised = complete_draft(&draft, 0, &scratch, &origin, &mut notes).map_err(FlowError::MalformedEdit)?;
    Ok(revised.after)
}
