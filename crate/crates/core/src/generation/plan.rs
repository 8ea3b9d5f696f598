use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::GenerationError;
use crate::knowledge::Records;
use crate::provider::{task, ChatProvider, Message, ProviderRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub description: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub pseudo_sql: String,
}

/// Ordered plan steps; the JSON form is `{"steps": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotPlan {
    pub steps: Vec<PlanStep>,
}

impl CotPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    /// Numbered steps; pseudo-SQL on an indented line when included.
    pub fn render(&self, include_pseudo_sql: bool) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{}. {}", i + 1, step.description);
            if include_pseudo_sql && !step.pseudo_sql.is_empty() {
                let _ = writeln!(out, "   {}", step.pseudo_sql);
            }
        }
        out
    }

    pub fn without_pseudo_sql(&self) -> CotPlan {
        CotPlan {
            steps: self
                .steps
                .iter()
                .map(|s| PlanStep { description: s.description.clone(), pseudo_sql: String::new() })
                .collect(),
        }
    }

    /// Adds missing `...` affixes to pseudo-SQL; returns one note per fix.
    pub fn enforce_affixes(&mut self) -> Vec<String> {
        let mut notes = Vec::new();
        for (i, step) in self.steps.iter_mut().enumerate() {
            let text = step.pseudo_sql.trim();
            if text.is_empty() {
                continue;
            }
            let fixed = crate::sqlkit::affix(text);
            if fixed != step.pseudo_sql {
                notes.push(format!("step {}: added affixes to pseudo_sql", i + 1));
            }
            step.pseudo_sql = fixed;
        }
        notes
    }
}

/// Parses a plan document from a provider reply, tolerating fences and
/// surrounding prose.
pub fn parse_plan(reply: &str) -> Result<CotPlan, GenerationError> {
    let plan: CotPlan = crate::knowledge::ingest::first_json(reply)
        .ok_or_else(|| GenerationError::PlanParse("no plan JSON object found".into()))?;
    if plan.steps.is_empty() {
        return Err(GenerationError::PlanParse("plan has no steps".into()));
    }
    if let Some(i) = plan.steps.iter().position(|s| s.description.trim().is_empty()) {
        return Err(GenerationError::PlanParse(format!("step {} has no description", i + 1)));
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: CotPlan,
    pub notes: Vec<String>,
}

const PLAN_SYSTEM: &str = "Write a step-by-step plan for the SQL query that answers the question, \
using the instructions, examples and schema given. Reply with a JSON object \
{\"steps\": [{\"description\": \"...\", \"pseudo_sql\": \"...\"}]}. Each pseudo_sql is a partial SQL \
fragment wrapped in \"...\" on both sides.";

const PLAN_SYSTEM_NO_SQL: &str = "Write a step-by-step plan for the SQL query that answers the question, \
using the instructions, examples and schema given. Reply with a JSON object \
{\"steps\": [{\"description\": \"...\"}]} holding natural-language steps only.";

pub const PLAN_REMINDER: &str = "FORMAT REMINDER: reply with only the JSON object {\"steps\": [...]}, \
each step having a non-empty \"description\".";

/// Operator 6. `knowledge_prompt` is the rendered prompt without a plan.
/// A reply that fails to parse gets one reprompt with a format reminder.
pub fn generate_plan(
    knowledge_prompt: &str,
    provider: &dyn ChatProvider,
    include_pseudo_sql: bool,
    records: &Records,
) -> Result<PlanOutcome, GenerationError> {
    let system = if include_pseudo_sql { PLAN_SYSTEM } else { PLAN_SYSTEM_NO_SQL };
    let mut messages = vec![Message::system(system), Message::user(knowledge_prompt)];
    let first = provider.complete(&ProviderRequest::new(task::PLAN, messages.clone()))?.text;
    let mut notes = Vec::new();
    let mut plan = match parse_plan(&first) {
        Ok(p) => p,
        Err(e) => {
            notes.push(format!("reprompted after: {e}"));
            messages.push(Message::assistant(first));
            messages.push(Message::user(PLAN_REMINDER));
            let second = provider.complete(&ProviderRequest::new(task::PLAN, messages))?.text;
            parse_plan(&second)?
        }
    };
    if include_pseudo_sql {
        notes.extend(plan.enforce_affixes());
        notes.extend(echoed_examples(&plan, records));
    } else if plan.steps.iter().any(|s| !s.pseudo_sql.is_empty()) {
        plan = plan.without_pseudo_sql();
        notes.push("removed pseudo_sql from plan output".into());
    }
    Ok(PlanOutcome { plan, notes })
}

fn squash(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_uppercase()
}

/// Notes steps whose pseudo-SQL repeats a knowledge-set example verbatim.
fn echoed_examples(plan: &CotPlan, records: &Records) -> Vec<String> {
    let mut notes = Vec::new();
    for (i, step) in plan.steps.iter().enumerate() {
        let key = squash(crate::sqlkit::strip_affix(&step.pseudo_sql));
        if key.is_empty() {
            continue;
        }
        if let Some(e) = records
            .examples
            .iter()
            .find(|e| squash(e.substatement.bare_text()) == key)
        {
            notes.push(format!("step {} echoes example {}", i + 1, e.id));
        }
    }
    notes
}
