use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::generation::{parse_plan, CotPlan, GenerationError, GenerationTrace, PLAN_REMINDER};
use crate::knowledge::{
    current_content, instruction_id, Edit, EditKind, EditStatus, ExampleRecord, InstructionRecord,
    InstructionScope, ProvenanceRef, RecordContent, Records, TargetKind, HINT_OPERATORS,
};
use crate::provider::{ask, task, ChatProvider, Message, ProviderRequest};
use crate::sqlkit::{parse_query, ClauseKind, Dialect, Granularity, SubStatement};

/// A retrieved element the feedback is about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditTarget {
    pub target_kind: TargetKind,
    pub target_id: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expansion {
    pub target: EditTarget,
    pub explanation: String,
}

fn kind_tag(kind: TargetKind) -> &'static str {
    match kind {
        TargetKind::Example => "example",
        TargetKind::Instruction => "instruction",
    }
}

fn parse_kind(text: &str) -> Option<TargetKind> {
    match text.trim().to_ascii_lowercase().as_str() {
        "example" | "examples" => Some(TargetKind::Example),
        "instruction" | "instructions" => Some(TargetKind::Instruction),
        _ => None,
    }
}

/// Retrieved elements as `[kind:id]` lines.
pub fn context_listing(trace: &GenerationTrace) -> String {
    let mut out = String::new();
    for e in &trace.context.examples {
        let _ = writeln!(out, "[example:{}] {} :: {}", e.record.id, e.record.nl_description, e.record.substatement.text);
    }
    for i in &trace.context.instructions {
        let _ = writeln!(out, "[instruction:{}] {}", i.record.id, i.record.text);
    }
    out
}

#[derive(Deserialize)]
struct TargetReply {
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    id: Option<String>,
    /// `kind:id` in one string.
    #[serde(default, rename = "ref")]
    reference: Option<String>,
    #[serde(default)]
    explanation: String,
}

const TARGETS_SYSTEM: &str = "A user gave feedback on a generated SQL query. Decide which of the \
retrieved examples and instructions the feedback is about. Reply with a JSON array of \
{\"ref\": \"example:<id>\" or \"instruction:<id>\", \"explanation\": \"...\"}; reply [] if none apply.";

/// Operator i. Targets the provider names that are not in the trace's
/// context are dropped with a note.
pub fn generate_targets(
    feedback: &str,
    trace: &GenerationTrace,
    provider: &dyn ChatProvider,
) -> (Vec<EditTarget>, Vec<String>) {
    let mut notes = Vec::new();
    let user = format!(
        "QUERY: {}\nSQL: {}\nFEEDBACK: {feedback}\nRETRIEVED:\n{}",
        trace.query,
        trace.final_sql.as_deref().or(trace.chosen().map(|c| c.sql_text.as_str())).unwrap_or(""),
        context_listing(trace)
    );
    let reply = match ask(provider, task::FEEDBACK_TARGETS, TARGETS_SYSTEM, user) {
        Ok(r) => r,
        Err(e) => {
            notes.push(format!("target selection failed: {e}"));
            return (Vec::new(), notes);
        }
    };
    let parsed: Vec<TargetReply> = crate::knowledge::ingest::first_json(&reply).unwrap_or_default();
    let mut targets: Vec<EditTarget> = Vec::new();
    for t in parsed {
        let (kind, id) = match (&t.reference, &t.kind, &t.id) {
            (Some(r), _, _) => match r.split_once(':') {
                Some((k, id)) => (parse_kind(k), id.trim().to_string()),
                None => (None, r.clone()),
            },
            (None, Some(k), Some(id)) => (parse_kind(k), id.trim().to_string()),
            _ => (None, String::new()),
        };
        let present = match kind {
            Some(TargetKind::Example) => trace.context.examples.iter().any(|e| e.record.id == id),
            Some(TargetKind::Instruction) => trace.context.instructions.iter().any(|i| i.record.id == id),
            None => false,
        };
        match kind {
            Some(kind) if present => {
                if !targets.iter().any(|x| x.target_kind == kind && x.target_id == id) {
                    targets.push(EditTarget { target_kind: kind, target_id: id, explanation: t.explanation });
                }
            }
            _ => notes.push(format!(
                "dropped target not in context: {}",
                t.reference.clone().unwrap_or_else(|| format!("{}:{}", t.kind.unwrap_or_default(), id))
            )),
        }
    }
    if targets.is_empty() {
        notes.push("no retrieved element matches the feedback; an insert edit may be needed".into());
    }
    (targets, notes)
}

const EXPAND_SYSTEM: &str = "Explain in detail why the user's feedback concerns this knowledge \
element and what about its current content has to change. Reply with the explanation only.";

/// Operator ii: one call per target, in order. Failed calls skip the target.
pub fn expand_feedback(
    feedback: &str,
    targets: &[EditTarget],
    records: &Records,
    provider: &dyn ChatProvider,
) -> (Vec<Expansion>, Vec<String>) {
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for t in targets {
        let content = current_content(records, t.target_kind, &t.target_id)
            .map(|c| c.summary())
            .unwrap_or_default();
        let user = format!(
            "FEEDBACK: {feedback}\nELEMENT [{}:{}]: {content}\nWHY RELEVANT: {}",
            kind_tag(t.target_kind),
            t.target_id,
            t.explanation
        );
        match ask(provider, task::FEEDBACK_EXPAND, EXPAND_SYSTEM, user) {
            Ok(text) => out.push(Expansion { target: t.clone(), explanation: text.trim().to_string() }),
            Err(e) => notes.push(format!("expansion for {}:{} failed: {e}", kind_tag(t.target_kind), t.target_id)),
        }
    }
    (out, notes)
}

fn expansions_text(feedback: &str, expansions: &[Expansion], records: &Records) -> String {
    let mut user = format!("FEEDBACK: {feedback}\n");
    for x in expansions {
        let content = current_content(records, x.target.target_kind, &x.target.target_id)
            .map(|c| c.summary())
            .unwrap_or_default();
        let _ = writeln!(
            user,
            "[{}:{}] {content}\nEXPLANATION: {}",
            kind_tag(x.target.target_kind),
            x.target.target_id,
            x.explanation
        );
    }
    user
}

const EDIT_PLAN_SYSTEM: &str = "Plan, step by step, the changes to the knowledge set that address \
the feedback. Changes may update, insert or delete examples and instructions. Reply with a JSON \
object {\"steps\": [{\"description\": \"...\"}]}.";

/// Operator iii. The plan shares the generation plan's JSON shape;
/// `pseudo_sql` may be empty. One reprompt on a parse failure.
pub fn plan_edits(
    feedback: &str,
    expansions: &[Expansion],
    records: &Records,
    provider: &dyn ChatProvider,
) -> Result<CotPlan, GenerationError> {
    let mut messages = vec![
        Message::system(EDIT_PLAN_SYSTEM),
        Message::user(expansions_text(feedback, expansions, records)),
    ];
    let first = provider.complete(&ProviderRequest::new(task::EDIT_PLAN, messages.clone()))?.text;
    match parse_plan(&first) {
        Ok(p) => Ok(p),
        Err(_) => {
            messages.push(Message::assistant(first));
            messages.push(Message::user(PLAN_REMINDER));
            let second = provider.complete(&ProviderRequest::new(task::EDIT_PLAN, messages))?.text;
            parse_plan(&second)
        }
    }
}

/// Edit as the provider writes it; completed against the knowledge set
/// into a full record.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EditDraft {
    pub kind: Option<String>,
    pub target_kind: Option<String>,
    #[serde(default)]
    pub target_id: Option<String>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub after: Option<DraftContent>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DraftContent {
    #[serde(default)]
    pub nl_description: Option<String>,
    /// Example fragment; `...` affixes mark a partial statement.
    #[serde(default)]
    pub sql: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub sql_fragment: Option<String>,
    #[serde(default)]
    pub operator: Option<String>,
    /// Intent names.
    #[serde(default)]
    pub intents: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DraftReply {
    Wrapped { edits: Vec<EditDraft> },
    Bare(Vec<EditDraft>),
}

/// Identity and bookkeeping for edits produced in one iteration.
#[derive(Debug, Clone)]
pub struct EditOrigin<'a> {
    pub feedback_id: &'a str,
    pub session_id: &'a str,
    pub iteration: u32,
    pub created_at: DateTime<Utc>,
}

pub fn edit_id(origin: &EditOrigin, index: usize, draft: &EditDraft) -> String {
    let mut h = Sha256::new();
    for part in [
        origin.session_id,
        &origin.iteration.to_string(),
        &index.to_string(),
        draft.kind.as_deref().unwrap_or(""),
        draft.target_id.as_deref().unwrap_or(""),
    ] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    format!("ed_{}", &hex::encode(h.finalize())[..16])
}

fn intent_ids(records: &Records, names: &[String], notes: &mut Vec<String>) -> crate::knowledge::IntentIds {
    let mut ids = crate::knowledge::IntentIds::new();
    for n in names {
        match records.intent_by_name(n).or_else(|| records.intents.iter().find(|i| &i.id == n)) {
            Some(i) => {
                ids.insert(i.id.clone());
            }
            None => notes.push(format!("ignored unknown intent `{n}`")),
        }
    }
    ids
}

fn example_from_draft(
    current: Option<&ExampleRecord>,
    d: &DraftContent,
    records: &Records,
    origin: &EditOrigin,
    notes: &mut Vec<String>,
) -> Result<ExampleRecord, String> {
    let mut e = match current {
        Some(c) => c.clone(),
        None => {
            let sql = d.sql.as_deref().ok_or("inserted example has no sql")?.trim();
            let source = format!("feedback:{}", origin.feedback_id);
            let sub = if !sql.starts_with("...") && parse_query(sql, Dialect::Sqlite).is_ok() {
                SubStatement::new(Granularity::SubQuery, sql.to_string(), None, &source, None)
            } else {
                SubStatement::new(Granularity::Clause, sql.to_string(), Some(source.clone()), &source, guess_clause(sql))
            };
            ExampleRecord {
                id: sub.id.clone(),
                substatement: sub,
                nl_description: String::new(),
                intent_ids: Default::default(),
                provenance: ProvenanceRef::feedback("", origin.feedback_id),
                embedding_cache: None,
            }
        }
    };
    if let (Some(sql), Some(_)) = (&d.sql, current) {
        e.substatement.text = sql.trim().to_string();
        e.substatement.refresh();
    }
    if let Some(desc) = &d.nl_description {
        e.nl_description = desc.trim().to_string();
    }
    if let Some(names) = &d.intents {
        e.intent_ids = intent_ids(records, names, notes);
    }
    if e.nl_description.is_empty() {
        return Err("example has no description".into());
    }
    Ok(e)
}

fn guess_clause(sql: &str) -> Option<ClauseKind> {
    let upper = crate::sqlkit::strip_affix(sql.trim()).trim_start().to_ascii_uppercase();
    let table = [
        ("SELECT", ClauseKind::SelectList),
        ("FROM", ClauseKind::From),
        ("WHERE", ClauseKind::Where),
        ("AND", ClauseKind::Where),
        ("GROUP BY", ClauseKind::GroupBy),
        ("HAVING", ClauseKind::Having),
        ("ORDER BY", ClauseKind::OrderBy),
        ("LIMIT", ClauseKind::Limit),
        ("WINDOW", ClauseKind::Window),
    ];
    table
        .iter()
        .find(|(kw, _)| upper.starts_with(kw))
        .map(|(_, k)| *k)
        .or_else(|| upper.contains("JOIN").then_some(ClauseKind::Join))
}

fn instruction_from_draft(
    current: Option<&InstructionRecord>,
    d: &DraftContent,
    hint: bool,
    records: &Records,
    origin: &EditOrigin,
    notes: &mut Vec<String>,
) -> Result<InstructionRecord, String> {
    let mut i = match current {
        Some(c) => c.clone(),
        None => InstructionRecord {
            id: String::new(),
            text: String::new(),
            sql_fragment: None,
            scope: InstructionScope::Generation,
            operator: None,
            intent_ids: Default::default(),
            provenance: ProvenanceRef::feedback("", origin.feedback_id),
            embedding_cache: None,
        },
    };
    if let Some(t) = &d.text {
        i.text = t.trim().to_string();
    }
    if d.sql_fragment.is_some() {
        i.sql_fragment = d.sql_fragment.clone().filter(|f| !f.trim().is_empty());
    }
    if let Some(names) = &d.intents {
        i.intent_ids = intent_ids(records, names, notes);
    }
    if hint {
        i.scope = InstructionScope::RetrievalHint;
        i.operator = d.operator.clone().or(i.operator);
        match i.operator.as_deref() {
            Some(op) if HINT_OPERATORS.contains(&op) => {}
            other => return Err(format!("retrieval hint names unknown operator {other:?}")),
        }
    }
    if i.text.is_empty() {
        return Err("instruction has no text".into());
    }
    if current.is_none() {
        i.id = instruction_id(&i.text);
    }
    Ok(i)
}

/// Completes one draft into an edit against `records`.
pub fn complete_draft(
    draft: &EditDraft,
    index: usize,
    records: &Records,
    origin: &EditOrigin,
    notes: &mut Vec<String>,
) -> Result<Edit, String> {
    let kind = match draft.kind.as_deref().map(str::to_ascii_lowercase).as_deref() {
        Some("update") => EditKind::Update,
        Some("insert") => EditKind::Insert,
        Some("delete") => EditKind::Delete,
        Some("retrieval_hint") => EditKind::RetrievalHint,
        other => return Err(format!("unknown edit kind {other:?}")),
    };
    let target_kind = match kind {
        EditKind::RetrievalHint => TargetKind::Instruction,
        _ => draft
            .target_kind
            .as_deref()
            .and_then(parse_kind)
            .ok_or_else(|| format!("unknown target kind {:?}", draft.target_kind))?,
    };
    let before = match (&draft.target_id, kind) {
        (Some(id), EditKind::Update | EditKind::Delete | EditKind::RetrievalHint) => Some(
            current_content(records, target_kind, id).ok_or_else(|| format!("target {id} not in knowledge set"))?,
        ),
        (None, EditKind::Update | EditKind::Delete) => return Err("update or delete without target_id".into()),
        _ => None,
    };
    let after = if kind == EditKind::Delete {
        None
    } else {
        let d = draft.after.clone().ok_or("edit has no `after` content")?;
        Some(match (target_kind, &before) {
            (TargetKind::Example, b) => {
                let cur = match b {
                    Some(RecordContent::Example(e)) => Some(e),
                    _ => None,
                };
                RecordContent::Example(example_from_draft(cur, &d, records, origin, notes)?)
            }
            (TargetKind::Instruction, b) => {
                let cur = match b {
                    Some(RecordContent::Instruction(i)) => Some(i),
                    _ => None,
                };
                let hint = kind == EditKind::RetrievalHint;
                RecordContent::Instruction(instruction_from_draft(cur, &d, hint, records, origin, notes)?)
            }
        })
    };
    let edit = Edit {
        id: edit_id(origin, index, draft),
        kind,
        target_kind,
        target_id: before.as_ref().map(|b| b.id().to_string()),
        before_hash: before.as_ref().map(|b| b.hash()),
        before,
        after,
        rationale: draft.rationale.trim().to_string(),
        status: EditStatus::Recommended,
        feedback_id: origin.feedback_id.to_string(),
        session_id: origin.session_id.to_string(),
        iteration: origin.iteration,
        revised: false,
        created_at: Some(origin.created_at),
    };
    edit.check_shape()?;
    Ok(edit)
}

const EDIT_GENERATE_SYSTEM: &str = "Write the knowledge-set edits that carry out the plan. Reply with \
a JSON object {\"edits\": [...]}; each edit has \"kind\" (update, insert, delete or retrieval_hint), \
\"target_kind\" (example or instruction), \"target_id\" for update and delete, a \"rationale\", and \
\"after\" holding the complete revised content: for examples {\"nl_description\", \"sql\", \"intents\"}, \
for instructions {\"text\", \"sql_fragment\", \"operator\"}.";

/// Operator iv. Malformed drafts are skipped with a note.
pub fn generate_edits(
    feedback: &str,
    plan: &CotPlan,
    expansions: &[Expansion],
    records: &Records,
    provider: &dyn ChatProvider,
    origin: &EditOrigin,
) -> Result<(Vec<Edit>, Vec<String>), GenerationError> {
    let mut user = expansions_text(feedback, expansions, records);
    let _ = write!(user, "PLAN:\n{}", plan.render(true));
    let reply = ask(provider, task::EDIT_GENERATE, EDIT_GENERATE_SYSTEM, user)?;
    let mut notes = Vec::new();
    let drafts = match crate::knowledge::ingest::first_json::<DraftReply>(&reply) {
        Some(DraftReply::Wrapped { edits }) | Some(DraftReply::Bare(edits)) => edits,
        None => {
            notes.push("edit reply held no JSON edits".into());
            Vec::new()
        }
    };
    let mut edits = Vec::new();
    for (index, draft) in drafts.iter().enumerate() {
        match complete_draft(draft, index, records, origin, &mut notes) {
            Ok(e) => edits.push(e),
            Err(message) => notes.push(format!("skipped malformed edit {}: {message}", index + 1)),
        }
    }
    Ok((edits, notes))
}
