use std::sync::Arc;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use genedit_core::clock::SteppingClock;
use genedit_core::knowledge::*;
use genedit_core::provider::{task, ScriptRule, ScriptedProvider};
use genedit_core::sqlkit::Dialect;

const TEXTS: [&str; 5] = [
    "Count orders only once per customer.",
    "Report revenue in thousands.",
    "Exclude cancelled orders from totals.",
    "Use the order date, not the ship date.",
    "Round percentages to two decimals.",
];

fn seeded(store: &KnowledgeStore) -> String {
    let intents = [IntentSpec { name: "sales".into(), description: "orders and revenue".into(), keywords: vec![] }];
    let v = ingest_intents(store, &intents, ROOT_VERSION, "t").unwrap();
    let log = [QueryLogEntry {
        id: Some("q1".into()),
        nl_text: "Show me revenue per city".into(),
        sql: "SELECT city, SUM(amount) FROM orders WHERE status = 'shipped' GROUP BY city".into(),
        intents: vec!["sales".into()],
        db_id: None,
    }];
    let v = ingest_query_log(store, &log, &v, "t", Dialect::Sqlite).unwrap().version_id;
    let items: Vec<_> = TEXTS.iter().map(|t| serde_json::json!({"text": t, "intents": ["sales"]})).collect();
    let provider = ScriptedProvider::strict(vec![ScriptRule::new(
        task::EXTRACT_INSTRUCTIONS,
        serde_json::json!({ "instructions": items }).to_string(),
    )]);
    ingest_instructions(store, &[("handbook".into(), TEXTS.join(" "))], &v, &provider, "t").unwrap().version_id
}

fn new_store() -> (KnowledgeStore, String) {
    let store = KnowledgeStore::in_memory(Arc::new(SteppingClock::fixed()));
    let v = seeded(&store);
    (store, v)
}

fn edit(id: &str, kind: EditKind, target: Option<&InstructionRecord>, text: Option<&str>) -> Edit {
    let after = text.map(|t| {
        let mut rec = target.cloned().unwrap_or_else(|| InstructionRecord {
            id: String::new(),
            text: String::new(),
            sql_fragment: None,
            scope: InstructionScope::Generation,
            operator: None,
            intent_ids: [intent_id("sales")].into(),
            provenance: ProvenanceRef::feedback("", "fb"),
            embedding_cache: None,
        });
        rec.text = t.to_string();
        RecordContent::Instruction(rec)
    });
    let before = target.map(|t| RecordContent::Instruction(t.clone()));
    Edit {
        id: id.into(),
        kind,
        target_kind: TargetKind::Instruction,
        target_id: target.map(|t| t.id.clone()),
        before_hash: before.as_ref().map(RecordContent::hash),
        before,
        after,
        rationale: String::new(),
        status: EditStatus::Approved,
        feedback_id: "fb".into(),
        session_id: "fb".into(),
        iteration: 1,
        revised: false,
        created_at: None,
    }
}

/// Op per seeded instruction: 0 keep, 1 update, 2 delete; plus inserts.
fn edits_for(records: &Records, ops: &[u8], inserts: usize) -> Vec<Edit> {
    let mut out = Vec::new();
    for (i, (ins, op)) in records.instructions.iter().zip(ops).enumerate() {
        match op {
            1 => out.push(edit(&format!("e{i}"), EditKind::Update, Some(ins), Some(&format!("{} (revised)", ins.text)))),
            2 => out.push(edit(&format!("e{i}"), EditKind::Delete, Some(ins), None)),
            _ => {}
        }
    }
    for n in 0..inserts {
        out.push(edit(&format!("n{n}"), EditKind::Insert, None, Some(&format!("New guideline number {n}."))));
    }
    out
}

fn all_views(store: &KnowledgeStore) -> Vec<(String, Vec<u8>)> {
    store
        .versions()
        .into_iter()
        .map(|v| {
            let records = &store.version(&v.version_id).unwrap().records;
            let bytes = records.view(&records.all_intent_ids()).to_bytes();
            (v.version_id, bytes)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn overlay_and_merge_give_the_same_view(ops in proptest::collection::vec(0u8..3, 5), inserts in 0usize..3) {
        let (store, base) = new_store();
        let records = store.version(&base).unwrap().records.clone();
        let edits = edits_for(&records, &ops, inserts);
        let overlay = store.overlay(&base, &edits).unwrap();
        let merged = store.merge(&base, &edits, "t", Some("fb"), AuditAction::EditMerged).unwrap();
        let intents = records.all_intent_ids();
        prop_assert_eq!(overlay.view(&intents).to_bytes(), store.get_view(&merged, &intents).unwrap().to_bytes());
        prop_assert_eq!(store.get_view(&base, &intents).unwrap(), records.view(&intents));
    }

    #[test]
    fn versions_never_change(steps in proptest::collection::vec((proptest::collection::vec(0u8..3, 5), 0usize..2, any::<bool>(), 0usize..8), 1..6)) {
        let (store, _) = new_store();
        for (ops, inserts, revert, pick) in steps {
            let before = all_views(&store);
            if revert {
                let target = before[pick % before.len()].0.clone();
                store.revert(&target, "t").unwrap();
            } else {
                let head = store.head();
                let records = store.version(&head).unwrap().records.clone();
                let edits = edits_for(&records, &ops, inserts);
                // Inserts may collide with an earlier insert of the same text.
                let _ = store.merge(&head, &edits, "t", None, AuditAction::EditMerged);
            }
            let after = all_views(&store);
            prop_assert_eq!(&after[..before.len()], &before[..]);
            prop_assert!(store.audit_is_complete());
        }
    }
}

#[test]
fn revert_restores_the_pre_merge_view_byte_exactly() {
    let (store, base) = new_store();
    let records = store.version(&base).unwrap().records.clone();
    let edits = edits_for(&records, &[1, 2, 0, 0, 0], 1);
    store.merge(&base, &edits, "t", Some("fb"), AuditAction::EditMerged).unwrap();
    let reverted = store.revert(&base, "t").unwrap();
    let intents = records.all_intent_ids();
    assert_eq!(
        store.get_view(&reverted, &intents).unwrap().to_bytes(),
        store.get_view(&base, &intents).unwrap().to_bytes()
    );
    let again = store.revert(&reverted, "t").unwrap();
    assert_ne!(again, reverted);
    assert_eq!(store.version(&again).unwrap().records, store.version(&reverted).unwrap().records);
    assert!(matches!(store.revert("v9999", "t"), Err(KnowledgeError::UnknownVersion(_))));
    let audit = store.list_audit(&AuditFilter::default());
    assert_eq!(audit[0].action, AuditAction::Revert);
}

#[test]
fn merge_rejects_unapproved_and_stale_edits() {
    let (store, base) = new_store();
    let records = store.version(&base).unwrap().records.clone();
    let mut edits = edits_for(&records, &[1, 0, 0, 0, 0], 0);
    edits[0].status = EditStatus::Submitted;
    assert!(matches!(
        store.merge(&base, &edits, "t", None, AuditAction::EditMerged),
        Err(KnowledgeError::NotApproved(_))
    ));
    edits[0].status = EditStatus::Approved;
    let merged = store.merge(&base, &edits, "t", None, AuditAction::EditMerged).unwrap();
    let err = store.merge(&merged, &edits, "t", None, AuditAction::EditMerged).unwrap_err();
    assert!(matches!(err, KnowledgeError::StaleEdit { .. }), "{err:?}");
    assert!(matches!(store.overlay(&merged, &edits), Err(KnowledgeError::StaleEdit { .. })));
}

#[test]
fn merged_records_carry_feedback_provenance() {
    let (store, base) = new_store();
    let records = store.version(&base).unwrap().records.clone();
    let edits = edits_for(&records, &[1, 0, 0, 0, 0], 0);
    let merged = store.merge(&base, &edits, "t", Some("fb"), AuditAction::EditMerged).unwrap();
    let rec = store.version(&merged).unwrap().records.instruction(&records.instructions[0].id).unwrap().clone();
    assert_eq!(rec.provenance.source_kind, SourceKind::FeedbackEdit);
    assert_eq!(rec.provenance.feedback_id.as_deref(), Some("fb"));
}

#[test]
fn audit_ties_order_by_sequence() {
    let at = Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap();
    let store = KnowledgeStore::in_memory(Arc::new(SteppingClock::frozen(at)));
    let v1 = seeded(&store);
    let v2 = store.revert(ROOT_VERSION, "t").unwrap();
    let v3 = store.revert(&v1, "t").unwrap();
    let audit = store.list_audit(&AuditFilter::default());
    assert!(audit.iter().all(|e| e.timestamp == at));
    let seqs: Vec<u64> = audit.iter().map(|e| e.seq).collect();
    let mut sorted = seqs.clone();
    sorted.sort_by(|a, b| b.cmp(a));
    assert_eq!(seqs, sorted);
    assert_eq!(audit[0].resulting_version, v3);
    assert_eq!(audit[1].resulting_version, v2);
    let limited = store.list_audit(&AuditFilter { limit: Some(2), ..Default::default() });
    assert_eq!(limited, audit[..2].to_vec());
}

#[test]
fn empty_intent_set_gives_an_empty_view() {
    let (store, base) = new_store();
    let view = store.get_view(&base, &IntentIds::new()).unwrap();
    assert_eq!(view, KnowledgeView::default());
    assert!(matches!(store.get_view("nope", &IntentIds::new()), Err(KnowledgeError::UnknownVersion(_))));
}

#[test]
fn directory_layout_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("knowledge");
    let (head, views) = {
        let store = KnowledgeStore::open(&root, Arc::new(SteppingClock::fixed())).unwrap();
        let v = seeded(&store);
        let records = store.version(&v).unwrap().records.clone();
        store.merge(&v, &edits_for(&records, &[2, 1, 0, 0, 0], 1), "t", Some("fb"), AuditAction::EditMerged).unwrap();
        (store.head(), all_views(&store))
    };
    assert!(root.join("audit.jsonl").is_file());
    assert!(root.join("versions").join(format!("{head}.manifest.json")).is_file());
    assert!(std::fs::read_dir(root.join("records")).unwrap().count() > 0);
    let reopened = KnowledgeStore::open(&root, Arc::new(SteppingClock::fixed())).unwrap();
    assert_eq!(reopened.head(), head);
    assert_eq!(all_views(&reopened), views);
    assert!(reopened.audit_is_complete());
    assert_eq!(reopened.list_audit(&AuditFilter::default()).len(), 4);
}

#[test]
fn schema_top_values_stay_within_five() {
    let exec = genedit_core::exec::SqliteExecutor::with_fixtures();
    let store = KnowledgeStore::in_memory(Arc::new(SteppingClock::fixed()));
    let v = ingest_schema(&store, &exec, "retail", ROOT_VERSION, "t").unwrap().version_id;
    let v = ingest_schema(&store, &exec, "sports", &v, "t").unwrap().version_id;
    for version in store.versions() {
        assert!(store.version(&version.version_id).unwrap().records.schema.iter().all(|s| s.top_values.len() <= 5));
    }
    assert!(!store.version(&v).unwrap().records.schema.is_empty());
}
