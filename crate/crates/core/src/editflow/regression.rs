use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::evalkit::{ex_match, has_order_by};
use crate::exec::SqlExecutor;
use crate::generation::{generate, GenerationConfig};
use crate::knowledge::KnowledgeSnapshot;
use crate::provider::ChatProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub id: String,
    pub nl_query: String,
    pub approved_sql: String,
    pub db_id: String,
    /// Outcome of the most recent regression run.
    #[serde(default)]
    pub last_ex: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum GoldenError {
    #[error("cannot read golden file: {0}")]
    Io(String),
    #[error("malformed golden file: {0}")]
    Malformed(String),
    #[error("golden case {id} does not execute: {message}")]
    Broken { id: String, message: String },
}

/// Reads a golden-case JSON array and checks every approved query runs.
pub fn load_golden(path: &Path, executor: &dyn SqlExecutor) -> Result<Vec<GoldenCase>, GoldenError> {
    let text = std::fs::read_to_string(path).map_err(|e| GoldenError::Io(e.to_string()))?;
    let cases: Vec<GoldenCase> = serde_json::from_str(&text).map_err(|e| GoldenError::Malformed(e.to_string()))?;
    for c in &cases {
        executor
            .execute(&c.db_id, &c.approved_sql)
            .map_err(|e| GoldenError::Broken { id: c.id.clone(), message: e.to_string() })?;
    }
    Ok(cases)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCase {
    pub id: String,
    pub previous_ex: bool,
    pub new_ex: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RegressionCase {
    pub fn flipped(&self) -> bool {
        self.previous_ex && !self.new_ex
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRuntime {
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub workers: usize,
    pub base_label: String,
    pub overlay_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub cases: Vec<RegressionCase>,
    pub verdict: Verdict,
    pub runtime: RegressionRuntime,
}

/// Pass iff no case went from matching to not matching.
pub fn verdict_of(cases: &[RegressionCase]) -> Verdict {
    if cases.iter().any(RegressionCase::flipped) {
        Verdict::Fail
    } else {
        Verdict::Pass
    }
}

/// EX of one golden case against one knowledge snapshot. Any failure
/// counts as a miss.
fn golden_ex(
    case: &GoldenCase,
    knowledge: &KnowledgeSnapshot,
    provider: &dyn ChatProvider,
    executor: &dyn SqlExecutor,
    config: &GenerationConfig,
) -> (bool, Option<String>) {
    let trace = generate(&case.nl_query, &case.db_id, knowledge, provider, executor, config);
    let Some(sql) = trace.final_sql else {
        return (false, Some(format!("{}: no SQL ({:?})", knowledge.label, trace.status)));
    };
    match (executor.execute(&case.db_id, &sql), executor.execute(&case.db_id, &case.approved_sql)) {
        (Ok(pred), Ok(gold)) => {
            let ok = ex_match(&pred, &gold, has_order_by(&case.approved_sql, config.dialect));
            (ok, (!ok).then(|| format!("{}: result differs from approved SQL", knowledge.label)))
        }
        (Err(e), _) | (_, Err(e)) => (false, Some(format!("{}: {e}", knowledge.label))),
    }
}

/// Generates every golden case against `base` and `overlay`, on at most
/// `workers` threads.
pub fn regression_report(
    base: &KnowledgeSnapshot,
    overlay: &KnowledgeSnapshot,
    golden: &[GoldenCase],
    provider: &dyn ChatProvider,
    executor: &dyn SqlExecutor,
    config: &GenerationConfig,
    workers: usize,
    now: impl Fn() -> DateTime<Utc>,
) -> RegressionReport {
    let started_at = now();
    let workers = workers.clamp(1, golden.len().max(1));
    let slots: Mutex<Vec<Option<RegressionCase>>> = Mutex::new(vec![None; golden.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= golden.len() {
                    break;
                }
                let case = &golden[i];
                let (previous_ex, n1) = golden_ex(case, base, provider, executor, config);
                let (new_ex, n2) = golden_ex(case, overlay, provider, executor, config);
                let notes = n1.into_iter().chain(n2).collect();
                slots.lock().expect("regression slots")[i] =
                    Some(RegressionCase { id: case.id.clone(), previous_ex, new_ex, notes });
            });
        }
    });
    let cases: Vec<RegressionCase> =
        slots.into_inner().expect("regression slots").into_iter().map(|c| c.expect("case ran")).collect();
    RegressionReport {
        verdict: verdict_of(&cases),
        cases,
        runtime: RegressionRuntime {
            started_at,
            finished_at: now(),
            workers,
            base_label: base.label.clone(),
            overlay_label: overlay.label.clone(),
        },
    }
}
