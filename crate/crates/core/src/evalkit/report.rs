use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Difficulty, ExResult};

pub const TABLE_COLUMNS: [&str; 4] = ["Sim.", "Mod.", "Chall.", "Total"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub result: ExResult,
}

fn cell(result: &ExResult, d: Option<Difficulty>) -> Option<f64> {
    match d {
        Some(d) => result.bucket(d).map(|b| b.ex),
        None => Some(result.total.ex),
    }
}

/// Text table: one row per configuration; rows after the first also show
/// the change against the first.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let columns = [Some(Difficulty::Simple), Some(Difficulty::Moderate), Some(Difficulty::Challenging), None];
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("Setting".len());
    let mut out = format!("{:<width$}", "Setting");
    for c in TABLE_COLUMNS {
        let _ = write!(out, " | {c:>16}");
    }
    out.push('\n');
    let base = rows.first();
    for row in rows {
        let _ = write!(out, "{:<width$}", row.label);
        for d in columns {
            let text = match (cell(&row.result, d), base.and_then(|b| cell(&b.result, d))) {
                (None, _) => "-".to_string(),
                (Some(v), Some(b)) if !std::ptr::eq(row, base.unwrap()) => format!("{v:.2} ({:+.2})", v - b),
                (Some(v), _) => format!("{v:.2}"),
            };
            let _ = write!(out, " | {text:>16}");
        }
        out.push('\n');
    }
    out
}
