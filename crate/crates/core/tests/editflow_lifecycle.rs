use std::collections::BTreeMap;
use std::sync::Arc;

use genedit_core::clock::SteppingClock;
use genedit_core::editflow::{DraftContent, EditDraft, EditFlow, FlowError, SessionStatus, Verdict};
use genedit_core::exec::SqliteExecutor;
use genedit_core::fixtures::finperf::*;
use genedit_core::generation::{generate, GenerationConfig, GenerationTrace};
use genedit_core::knowledge::{
    AuditAction, AuditFilter, EditKind, EditStatus, KnowledgeError, RecordContent, TargetKind,
};
use genedit_core::provider::ScriptedProvider;

struct Scenario {
    exec: SqliteExecutor,
    fp: FinPerf,
    provider: ScriptedProvider,
    flow: EditFlow,
    config: GenerationConfig,
}

impl Scenario {
    fn new() -> Self {
        let exec = SqliteExecutor::with_fixtures();
        let fp = fin_perf_store(Arc::new(SteppingClock::fixed()), &exec);
        let provider = fin_perf_provider(&fp);
        let flow = EditFlow::new(fp.store.clone());
        Scenario { exec, fp, provider, flow, config: GenerationConfig::default() }
    }

    fn trace(&self) -> GenerationTrace {
        let snapshot = self.fp.store.snapshot(&self.fp.version).unwrap();
        generate(FIN_PERF_QUERY, "sports", &snapshot, &self.provider, &self.exec, &self.config)
    }

    fn open(&self) -> (String, Vec<String>) {
        let (session, edits) = self.flow.open_session(&self.trace(), OWNERSHIP_FEEDBACK, &self.provider).unwrap();
        (session.id, edits.into_iter().map(|e| e.id).collect())
    }
}

fn records_bytes(records: &genedit_core::knowledge::Records) -> Vec<u8> {
    serde_json::to_vec(records).unwrap()
}

#[test]
fn feedback_yields_two_example_edits_and_one_instruction_edit() {
    let s = Scenario::new();
    let trace = s.trace();
    assert!(!trace.final_sql.as_deref().unwrap().contains(OWNERSHIP_PREDICATE));
    let (session, edits) = s.flow.open_session(&trace, OWNERSHIP_FEEDBACK, &s.provider).unwrap();
    assert_eq!(session.status, SessionStatus::Open);
    assert_eq!(session.id, "fb_0001");
    let round = &session.rounds[0];
    assert_eq!(round.targets.len(), 2);
    assert_eq!(round.expansions.len(), 2);
    assert_eq!(round.plan.as_ref().unwrap().steps.len(), 3);
    assert_eq!(edits.len(), 3);
    assert_eq!(edits.iter().filter(|e| e.target_kind == TargetKind::Example).count(), 2);
    assert_eq!(edits.iter().filter(|e| e.target_kind == TargetKind::Instruction).count(), 1);
    assert!(edits.iter().all(|e| e.status == EditStatus::Recommended && e.iteration == 1));
    let insert = edits.iter().find(|e| e.kind == EditKind::Insert).unwrap();
    match insert.after.as_ref().unwrap() {
        RecordContent::Instruction(i) => assert_eq!(i.text, OWNERSHIP_INSTRUCTION),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn full_lifecycle_merges_and_reverts_byte_exactly() {
    let s = Scenario::new();
    let (sid, ids) = s.open();
    let pre_merge = s.fp.store.head();

    s.flow.stage(&sid, &ids, &BTreeMap::new()).unwrap();
    let regenerated = s.flow.regenerate(&sid, &s.provider, &s.exec, &s.config).unwrap();
    assert!(regenerated.final_sql.as_deref().unwrap().contains(OWNERSHIP_PREDICATE));
    assert_eq!(s.flow.session(&sid).unwrap().iterations.len(), 1);
    let overlay = s.flow.overlay(&sid).unwrap();
    assert_eq!(regenerated.knowledge_label, overlay.label);

    let first = s.flow.submit(&sid).unwrap();
    assert_eq!(first.submitted_edit_ids.len(), 3);
    let again = s.flow.submit(&sid).unwrap();
    assert!(again.repeated);
    assert_eq!(again.submitted_edit_ids, first.submitted_edit_ids);

    let report = s.flow.run_regression(&sid, &golden_cases(), &s.provider, &s.exec, &s.config, 2).unwrap();
    assert_eq!(report.verdict, Verdict::Pass);
    let fin = report.cases.iter().find(|c| c.id == "g_fin_perf").unwrap();
    assert!(!fin.previous_ex && fin.new_ex, "{fin:?}");
    assert!(s.flow.session_edits(&sid).unwrap().iter().all(|e| e.status == EditStatus::RegressionPassed));

    let merged = s.flow.approve_session(&sid, "reviewer").unwrap();
    assert_eq!(s.fp.store.head(), merged);
    assert_eq!(s.flow.session(&sid).unwrap().status, SessionStatus::Merged);
    assert!(s.flow.session_edits(&sid).unwrap().iter().all(|e| e.status == EditStatus::Merged));
    let merged_records = &s.fp.store.version(&merged).unwrap().records;
    assert_eq!(records_bytes(&overlay.records), records_bytes(merged_records));

    let audit = s.fp.store.list_audit(&AuditFilter { feedback_id: Some(sid.clone()), ..Default::default() });
    assert_eq!(audit.len(), 1);
    assert_eq!(audit[0].action, AuditAction::EditMerged);
    assert_eq!(audit[0].edit_ids.len(), 3);

    let reverted = s.fp.store.revert(&pre_merge, "reviewer").unwrap();
    assert_eq!(
        records_bytes(&s.fp.store.version(&reverted).unwrap().records),
        records_bytes(&s.fp.store.version(&pre_merge).unwrap().records)
    );
}

#[test]
fn staging_only_the_instruction_adds_the_predicate() {
    let s = Scenario::new();
    let (sid, _) = s.open();
    let instruction = s
        .flow
        .session_edits(&sid)
        .unwrap()
        .into_iter()
        .find(|e| e.target_kind == TargetKind::Instruction)
        .unwrap();
    s.flow.stage(&sid, std::slice::from_ref(&instruction.id), &BTreeMap::new()).unwrap();
    let trace = s.flow.regenerate(&sid, &s.provider, &s.exec, &s.config).unwrap();
    assert!(trace.context.instructions.iter().any(|i| i.record.text == OWNERSHIP_INSTRUCTION));
    assert!(trace.final_sql.unwrap().contains(OWNERSHIP_PREDICATE));
}

#[test]
fn unstage_restores_the_base_view() {
    let s = Scenario::new();
    let (sid, ids) = s.open();
    s.flow.stage(&sid, &ids, &BTreeMap::new()).unwrap();
    let view = s.flow.unstage(&sid, &ids).unwrap();
    assert_eq!(view.label, s.fp.version);
    assert!(s.flow.session_edits(&sid).unwrap().iter().all(|e| e.status == EditStatus::Recommended));
    assert!(matches!(s.flow.submit(&sid), Err(FlowError::NothingStaged)));
}

#[test]
fn revised_edits_are_counted_as_accepted_after_iteration() {
    let s = Scenario::new();
    let (sid, ids) = s.open();
    let revision = DraftContent { text: Some("Our organizations carry the COC ownership flag.".into()), ..Default::default() };
    let instruction = s
        .flow
        .session_edits(&sid)
        .unwrap()
        .into_iter()
        .find(|e| e.target_kind == TargetKind::Instruction)
        .unwrap();
    let revisions = BTreeMap::from([(instruction.id.clone(), revision)]);
    s.flow.stage(&sid, &ids, &revisions).unwrap();
    let revised = s.flow.edit(&instruction.id).unwrap();
    assert!(revised.revised);
    match revised.after.unwrap() {
        RecordContent::Instruction(i) => assert_eq!(i.text, "Our organizations carry the COC ownership flag."),
        other => panic!("unexpected {other:?}"),
    }
    s.flow.submit(&sid).unwrap();
    s.flow.run_regression(&sid, &golden_cases(), &s.provider, &s.exec, &s.config, 1).unwrap();
    s.flow.approve_session(&sid, "reviewer").unwrap();
    let m = s.flow.edit_metrics(None, None);
    assert_eq!(m.recommended, 3);
    assert_eq!(m.accepted_as_is, 2);
    assert_eq!(m.accepted_after_iteration, 1);
    assert!((m.accepted_as_is_rate - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn deleting_the_multiplier_instruction_is_rejected_by_regression() {
    let s = Scenario::new();
    let draft = EditDraft {
        kind: Some("delete".into()),
        target_kind: Some("instruction".into()),
        target_id: Some(s.fp.multiplier_id.clone()),
        rationale: "cleanup".into(),
        after: None,
    };
    let (session, edit) = s.flow.direct_edit(&draft, "librarian").unwrap();
    assert!(session.direct);
    assert_eq!(edit.status, EditStatus::Submitted);
    let report = s.flow.run_regression(&session.id, &golden_cases(), &s.provider, &s.exec, &s.config, 2).unwrap();
    assert_eq!(report.verdict, Verdict::Fail, "{report:?}");
    let broken = report.cases.iter().find(|c| c.id == "g_revenue_change").unwrap();
    assert!(broken.previous_ex && !broken.new_ex);
    assert!(broken.flipped());
    assert_eq!(s.flow.edit(&edit.id).unwrap().status, EditStatus::Rejected);
    assert!(matches!(s.flow.approve_edit(&edit.id, "r"), Err(FlowError::NotRegressionPassed(_))));
    assert_eq!(s.fp.store.head(), s.fp.version);
}

#[test]
fn a_second_merge_on_the_same_record_is_stale() {
    let s = Scenario::new();
    let (a, a_ids) = s.open();
    let (b, b_ids) = s.open();
    assert_ne!(a, b);
    for (sid, ids) in [(&a, &a_ids), (&b, &b_ids)] {
        s.flow.stage(sid, ids, &BTreeMap::new()).unwrap();
        s.flow.submit(sid).unwrap();
        s.flow.run_regression(sid, &golden_cases(), &s.provider, &s.exec, &s.config, 1).unwrap();
    }
    s.flow.approve_session(&a, "r").unwrap();
    let err = s.flow.approve_session(&b, "r").unwrap_err();
    assert!(matches!(err, FlowError::Knowledge(KnowledgeError::StaleEdit { .. })), "{err:?}");
    assert!(s.flow.session_edits(&b).unwrap().iter().all(|e| e.status == EditStatus::RegressionPassed));
}

#[test]
fn staging_after_a_merge_on_the_target_is_stale() {
    let s = Scenario::new();
    let (a, a_ids) = s.open();
    let (b, b_ids) = s.open();
    s.flow.stage(&a, &a_ids, &BTreeMap::new()).unwrap();
    s.flow.submit(&a).unwrap();
    s.flow.run_regression(&a, &golden_cases(), &s.provider, &s.exec, &s.config, 1).unwrap();
    s.flow.approve_session(&a, "r").unwrap();
    let err = s.flow.stage(&b, &b_ids, &BTreeMap::new()).unwrap_err();
    assert!(matches!(err, FlowError::Knowledge(KnowledgeError::StaleEdit { .. })), "{err:?}");
    assert!(s.flow.session_edits(&b).unwrap().iter().all(|e| e.status == EditStatus::Recommended));
}

#[test]
fn closed_sessions_refuse_staging() {
    let s = Scenario::new();
    let (sid, ids) = s.open();
    s.flow.stage(&sid, &ids[..1], &BTreeMap::new()).unwrap();
    s.flow.submit(&sid).unwrap();
    let err = s.flow.stage(&sid, &ids[1..], &BTreeMap::new()).unwrap_err();
    assert!(matches!(err, FlowError::SessionClosed { status: SessionStatus::Submitted, .. }));
}

#[test]
fn feedback_needs_a_trace_with_context() {
    let s = Scenario::new();
    let mut trace = s.trace();
    trace.context = Default::default();
    assert!(matches!(s.flow.open_session(&trace, OWNERSHIP_FEEDBACK, &s.provider), Err(FlowError::NoContext(_))));
    assert!(matches!(s.flow.open_session(&s.trace(), "  ", &s.provider), Err(FlowError::EmptyFeedback)));
}

#[test]
fn second_feedback_round_carries_iteration_two() {
    let s = Scenario::new();
    let (sid, _) = s.open();
    let trace = s.flow.regenerate(&sid, &s.provider, &s.exec, &s.config).unwrap();
    let edits = s.flow.add_feedback(&sid, &trace, OWNERSHIP_FEEDBACK, &s.provider).unwrap();
    assert!(!edits.is_empty());
    assert!(edits.iter().all(|e| e.iteration == 2));
    assert_eq!(s.flow.session(&sid).unwrap().rounds.len(), 2);
}

#[test]
fn sessions_survive_a_reload() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.json");
    let s = Scenario::new();
    let flow = EditFlow::open(s.fp.store.clone(), &path).unwrap();
    let (session, edits) = flow.open_session(&s.trace(), OWNERSHIP_FEEDBACK, &s.provider).unwrap();
    flow.stage(&session.id, &[edits[0].id.clone()], &BTreeMap::new()).unwrap();
    drop(flow);
    let reloaded = EditFlow::open(s.fp.store.clone(), &path).unwrap();
    assert_eq!(reloaded.session(&session.id).unwrap().rounds, session.rounds);
    assert_eq!(reloaded.edit(&edits[0].id).unwrap().status, EditStatus::Staged);
}
