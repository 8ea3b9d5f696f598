use crate::sqlkit::{ClauseKind, Granularity, SubStatement};

const SUMMARY_CHARS: usize = 80;

fn summary(text: &str) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= SUMMARY_CHARS {
        flat
    } else {
        let cut: String = flat.chars().take(SUMMARY_CHARS).collect();
        format!("{cut}…")
    }
}

fn strip_keyword<'a>(text: &'a str, keywords: &[&str]) -> &'a str {
    let t = text.trim();
    for k in keywords {
        if t.len() >= k.len() && t[..k.len()].eq_ignore_ascii_case(k) {
            return t[k.len()..].trim();
        }
    }
    t
}

/// Templated description for a fragment without a human description.
/// `table` is the first relation of the enclosing sub-query.
pub fn describe(sub: &SubStatement, table: Option<&str>, nl_text: &str) -> String {
    if sub.granularity == Granularity::SubQuery {
        return nl_text.trim().to_string();
    }
    let body = sub.bare_text();
    let table = table.unwrap_or("the input");
    let text = match sub.clause_kind {
        Some(ClauseKind::SelectList) => {
            format!("selects {} from {table}", summary(strip_keyword(body, &["SELECT DISTINCT", "SELECT"])))
        }
        Some(ClauseKind::From) => format!("reads rows from {}", summary(strip_keyword(body, &["FROM"]))),
        Some(ClauseKind::Join) => format!("joins {table} with {}", summary(strip_keyword(body, &["JOIN"]))),
        Some(ClauseKind::Where) => {
            format!("filters rows of {table} by {}", summary(strip_keyword(body, &["WHERE", "AND"])))
        }
        Some(ClauseKind::GroupBy) => {
            format!("groups rows of {table} by {}", summary(strip_keyword(body, &["GROUP BY"])))
        }
        Some(ClauseKind::Having) => {
            format!("keeps groups of {table} where {}", summary(strip_keyword(body, &["HAVING", "AND"])))
        }
        Some(ClauseKind::OrderBy) => format!("orders results by {}", summary(strip_keyword(body, &["ORDER BY"]))),
        Some(ClauseKind::Window) => format!("defines windows {}", summary(strip_keyword(body, &["WINDOW"]))),
        Some(ClauseKind::Limit) => format!("limits results with {}", summary(body)),
        Some(ClauseKind::CteHeader) => {
            format!("names an intermediate result {}", summary(body.trim_end_matches('(').trim_end().trim_end_matches("AS").trim()))
        }
        None => summary(body),
    };
    if sub.granularity == Granularity::SubStatement {
        format!("part of a clause that {text}")
    } else {
        text
    }
}
