use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::candidates::{generate_sql, select_best, Candidate};
use super::plan::{generate_plan, CotPlan};
use crate::evalkit::AblationConfig;
use crate::exec::SqlExecutor;
use crate::knowledge::{InstructionRecord, KnowledgeSnapshot, Records};
use crate::provider::{ask, task, ChatProvider};
use crate::retrieval::{
    assemble_prompt, classify_intents, hints_for, link_schema, prompt_sections, reformulate, render_prompt,
    select_examples, select_instructions, ReformulatedQuery, RetrievalConfig, RetrievedContext,
};
use crate::sqlkit::Dialect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Retry bound for the repair loop.
    pub k: u32,
    pub n_candidates: usize,
    /// Sampling temperature when more than one candidate is requested.
    pub temperature: f64,
    pub dialect: Dialect,
    pub retrieval: RetrievalConfig,
    pub ablation: AblationConfig,
    /// Ask for a plain-language summary of the final SQL.
    pub summarize: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k: 2,
            n_candidates: 1,
            temperature: 0.7,
            dialect: Dialect::Sqlite,
            retrieval: RetrievalConfig::default(),
            ablation: AblationConfig::default(),
            summarize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub prompt: String,
    pub candidates: Vec<Candidate>,
    pub chosen: Option<usize>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Succeeded,
    RetriesExhausted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub request_id: String,
    pub query: String,
    pub db_id: String,
    pub knowledge_label: String,
    pub ablation: AblationConfig,
    pub rq: ReformulatedQuery,
    pub context: RetrievedContext,
    pub plan: Option<CotPlan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plan_notes: Vec<String>,
    pub attempts: Vec<Attempt>,
    pub final_sql: Option<String>,
    pub retries_used: u32,
    pub status: GenerationStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    pub nl_summary: Option<String>,
}

impl GenerationTrace {
    pub fn chosen(&self) -> Option<&Candidate> {
        let last = self.attempts.last()?;
        last.candidates.get(last.chosen?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

/// Deterministic id over the request inputs.
pub fn request_id(query: &str, db_id: &str, knowledge_label: &str, ablation: &AblationConfig) -> String {
    let mut h = Sha256::new();
    for part in [query, db_id, knowledge_label, &serde_json::to_string(ablation).unwrap_or_default()] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    format!("tr_{}", &hex::encode(h.finalize())[..16])
}

fn hint_suffix(key: &str, hints: &[&InstructionRecord]) -> String {
    let mut out = key.to_string();
    for h in hints {
        out.push(' ');
        out.push_str(&h.text);
    }
    out
}

/// Runs retrieval, planning, candidate generation, selection and repair.
/// Operator failures are recorded in the trace; a trace is always returned.
pub fn generate(
    query: &str,
    db_id: &str,
    knowledge: &KnowledgeSnapshot,
    provider: &dyn ChatProvider,
    executor: &dyn SqlExecutor,
    config: &GenerationConfig,
) -> GenerationTrace {
    let records: &Records = &knowledge.records;
    let rcfg = &config.retrieval;
    let ablation = &config.ablation;

    let h_reformulate = hints_for(records, "reformulate");
    let h_classify = hints_for(records, "classify_intents");
    let h_examples = hints_for(records, "select_examples");
    let h_instructions = hints_for(records, "select_instructions");
    let h_schema = hints_for(records, "link_schema");

    let rq = reformulate(query, provider, &h_reformulate);
    let intents = if records.intents.is_empty() {
        Default::default()
    } else {
        classify_intents(&rq, &records.intents, Some(provider), rcfg.theta, &h_classify)
    };
    let mut context = RetrievedContext {
        intents: intents.selected.clone(),
        intent_scores: intents.scores.clone(),
        ..Default::default()
    };
    context.examples =
        select_examples(&hint_suffix(&rq.canonical, &h_examples), &context.intents, records, rcfg);
    context.instructions = select_instructions(
        &hint_suffix(&rq.canonical, &h_instructions),
        &context.intents,
        &context.examples,
        records,
        rcfg,
    );
    if !ablation.disable_schema_linking {
        let linking = link_schema(
            &rq.canonical,
            &context.intents,
            &context.examples,
            &context.instructions,
            records,
            provider,
            rcfg,
            &h_schema,
        );
        context.schema = linking.elements;
        context.notes.extend(linking.notes);
    }
    let mut applied: Vec<InstructionRecord> = Vec::new();
    for h in h_reformulate.iter().chain(&h_classify).chain(&h_examples).chain(&h_instructions).chain(&h_schema) {
        if !applied.iter().any(|a| a.id == h.id) {
            applied.push((*h).clone());
        }
    }
    context.retrieval_hints = applied;

    let mut trace = GenerationTrace {
        request_id: request_id(query, db_id, &knowledge.label, ablation),
        query: query.to_string(),
        db_id: db_id.to_string(),
        knowledge_label: knowledge.label.clone(),
        ablation: ablation.clone(),
        rq,
        context,
        plan: None,
        plan_notes: Vec::new(),
        attempts: Vec::new(),
        final_sql: None,
        retries_used: 0,
        status: GenerationStatus::Failed,
        errors: Vec::new(),
        nl_summary: None,
    };

    let sections = prompt_sections(&trace.context, ablation, records);
    let plan_prompt = render_prompt(&trace.rq.canonical, &sections, None, &[]);
    match generate_plan(&plan_prompt, provider, !ablation.disable_pseudo_sql, records) {
        Ok(outcome) => {
            trace.plan = Some(outcome.plan);
            trace.plan_notes = outcome.notes;
        }
        Err(e) => trace.errors.push(e.to_string()),
    }

    run_attempt(&mut trace, records, provider, executor, config, &[]);
    let mut trace = repair_loop(trace, records, provider, executor, config);

    if config.summarize {
        if let Some(sql) = trace.final_sql.clone() {
            match summarize_sql(&sql, provider) {
                Ok(s) => trace.nl_summary = Some(s),
                Err(e) => trace.errors.push(format!("summary failed: {e}")),
            }
        }
    }
    trace
}

/// One prompt, `n` candidates, one selection; appended to the trace.
fn run_attempt(
    trace: &mut GenerationTrace,
    records: &Records,
    provider: &dyn ChatProvider,
    executor: &dyn SqlExecutor,
    config: &GenerationConfig,
    perceived: &[String],
) {
    let prompt = assemble_prompt(&trace.rq, &trace.context, trace.plan.as_ref(), perceived, &config.ablation, records);
    match generate_sql(&prompt, provider, config.n_candidates, config.temperature, config.dialect) {
        Ok(mut candidates) => {
            let chosen = select_best(&mut candidates, executor, &trace.db_id);
            let errors = candidates[chosen].errors();
            if errors.is_empty() {
                trace.final_sql = Some(candidates[chosen].sql_text.clone());
                trace.status = GenerationStatus::Succeeded;
            } else {
                trace.final_sql = None;
                trace.status = GenerationStatus::RetriesExhausted;
            }
            trace.attempts.push(Attempt { prompt, candidates, chosen: Some(chosen), errors });
        }
        Err(e) => {
            let message = format!("provider failed: {e}");
            trace.errors.push(message.clone());
            trace.final_sql = None;
            trace.status = GenerationStatus::Failed;
            trace.attempts.push(Attempt { prompt, candidates: Vec::new(), chosen: None, errors: vec![message] });
        }
    }
}

/// Regenerates with the chosen candidate's errors as context until a
/// candidate succeeds or `k` retries are spent.
pub fn repair_loop(
    mut trace: GenerationTrace,
    records: &Records,
    provider: &dyn ChatProvider,
    executor: &dyn SqlExecutor,
    config: &GenerationConfig,
) -> GenerationTrace {
    while trace.status == GenerationStatus::RetriesExhausted && trace.retries_used < config.k {
        let perceived = trace.attempts.last().map(|a| a.errors.clone()).unwrap_or_default();
        trace.retries_used += 1;
        run_attempt(&mut trace, records, provider, executor, config, &perceived);
    }
    trace
}

const SUMMARY_SYSTEM: &str = "Summarize this SQL for an analyst in one or two plain sentences.";

pub fn summarize_sql(sql: &str, provider: &dyn ChatProvider) -> Result<String, crate::provider::ProviderError> {
    ask(provider, task::SUMMARIZE, SUMMARY_SYSTEM, sql.to_string()).map(|s| s.trim().to_string())
}
