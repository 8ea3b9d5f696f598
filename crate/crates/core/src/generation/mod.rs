//! Planning, candidate generation, best-candidate selection and the repair
//! loop, wired into the end-to-end `generate` pipeline.

mod candidates;
mod pipeline;
mod plan;

use serde::{Deserialize, Serialize};

pub use candidates::{extract_sql, generate_sql, select_best, vote, Candidate, ExecOutcome};
pub use pipeline::{
    generate, repair_loop, request_id, summarize_sql, Attempt, GenerationConfig, GenerationStatus,
    GenerationTrace,
};
pub use plan::{generate_plan, parse_plan, CotPlan, PlanOutcome, PlanStep, PLAN_REMINDER};

use crate::provider::ProviderError;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum GenerationError {
    #[error("plan could not be parsed: {0}")]
    PlanParse(String),
    #[error("provider failed: {0}")]
    Provider(String),
}

impl From<ProviderError> for GenerationError {
    fn from(e: ProviderError) -> Self {
        GenerationError::Provider(e.to_string())
    }
}

/// Contents of the first fenced code block, without the language tag.
pub fn fenced_block(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n').map(|i| i + 1)?;
    let body = &after[body_start..];
    let close = body.find("```")?;
    Some(body[..close].trim())
}
