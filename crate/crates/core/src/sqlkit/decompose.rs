use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sqlparser::ast::{BinaryOperator, Expr, GroupByExpr, Query, Select, SetExpr};

use super::rewrite::cte_header_name;
use super::{fragment_key, parse, CteForm, Dialect, SqlError};

/// Prefix and suffix marking a fragment as part of a larger query.
pub const AFFIX: &str = "...";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    SubQuery,
    Clause,
    SubStatement,
}

impl Granularity {
    fn tag(self) -> &'static str {
        match self {
            Granularity::SubQuery => "sub_query",
            Granularity::Clause => "clause",
            Granularity::SubStatement => "sub_statement",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseKind {
    SelectList,
    From,
    Join,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Window,
    Limit,
    CteHeader,
}

/// One example unit: a whole sub-query, a clause, or a finer sub-statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubStatement {
    pub id: String,
    pub granularity: Granularity,
    pub text: String,
    pub affixed: bool,
    pub parent_id: Option<String>,
    pub source_query_id: String,
    /// Absent for sub-query granularity.
    pub clause_kind: Option<ClauseKind>,
}

impl SubStatement {
    pub fn new(
        granularity: Granularity,
        text: String,
        parent_id: Option<String>,
        source_query_id: &str,
        clause_kind: Option<ClauseKind>,
    ) -> Self {
        let affixed = granularity != Granularity::SubQuery;
        let text = if affixed { affix(&text) } else { text };
        SubStatement {
            id: substatement_id(granularity, &text),
            granularity,
            text,
            affixed,
            parent_id,
            source_query_id: source_query_id.to_string(),
            clause_kind,
        }
    }

    /// Text without the `...` affixes.
    pub fn bare_text(&self) -> &str {
        if self.affixed {
            strip_affix(&self.text)
        } else {
            &self.text
        }
    }

    /// Recomputes `id` and `affixed` after the text changed.
    pub fn refresh(&mut self) {
        self.affixed = self.granularity != Granularity::SubQuery;
        if self.affixed {
            self.text = affix(&self.text);
        }
        self.id = substatement_id(self.granularity, &self.text);
    }
}

pub(crate) fn affix(text: &str) -> String {
    let trimmed = text.trim();
    let mut out = String::with_capacity(trimmed.len() + 6);
    if !trimmed.starts_with(AFFIX) {
        out.push_str(AFFIX);
    }
    out.push_str(trimmed);
    if !trimmed.ends_with(AFFIX) || trimmed.len() < 2 * AFFIX.len() {
        out.push_str(AFFIX);
    }
    out
}

pub(crate) fn strip_affix(text: &str) -> &str {
    let t = text.strip_prefix(AFFIX).unwrap_or(text);
    t.strip_suffix(AFFIX).unwrap_or(t)
}

/// Content hash over granularity and whitespace-normalized text.
pub fn substatement_id(granularity: Granularity, text: &str) -> String {
    let key = fragment_key(text).unwrap_or_else(|_| {
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    });
    let mut hasher = Sha256::new();
    hasher.update(granularity.tag().as_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

/// Splits a CTE form into sub-queries (one per CTE plus the final select)
/// and their clause and sub-statement children, in document order.
pub fn decompose(form: &CteForm, source_query_id: &str) -> Vec<SubStatement> {
    let mut out = Vec::new();
    for cte in &form.ctes {
        let body = cte.body.render();
        let parent = SubStatement::new(Granularity::SubQuery, body, None, source_query_id, None);
        let parent_id = parent.id.clone();
        out.push(parent);
        out.push(SubStatement::new(
            Granularity::Clause,
            format!("{} AS (", cte_header_name(&cte.name, &cte.columns)),
            Some(parent_id.clone()),
            source_query_id,
            Some(ClauseKind::CteHeader),
        ));
        if let Some(q) = cte.body.query() {
            push_query_clauses(q, &parent_id, source_query_id, &mut out);
        }
    }
    let final_text = form.final_select.render();
    let parent = SubStatement::new(Granularity::SubQuery, final_text, None, source_query_id, None);
    let parent_id = parent.id.clone();
    out.push(parent);
    if let Some(q) = form.final_select.query() {
        push_query_clauses(q, &parent_id, source_query_id, &mut out);
    }
    out
}

fn push_query_clauses(query: &Query, parent_id: &str, source: &str, out: &mut Vec<SubStatement>) {
    push_set_expr_clauses(&query.body, parent_id, source, out);
    if let Some(order_by) = &query.order_by {
        out.push(clause(order_by.to_string(), parent_id, source, ClauseKind::OrderBy));
    }
    if let Some(limit) = &query.limit_clause {
        out.push(clause(limit.to_string(), parent_id, source, ClauseKind::Limit));
    }
}

fn push_set_expr_clauses(body: &SetExpr, parent_id: &str, source: &str, out: &mut Vec<SubStatement>) {
    match body {
        SetExpr::Select(select) => push_select_clauses(select, parent_id, source, out),
        SetExpr::Query(q) => push_query_clauses(q, parent_id, source, out),
        SetExpr::SetOperation { left, right, .. } => {
            push_set_expr_clauses(left, parent_id, source, out);
            push_set_expr_clauses(right, parent_id, source, out);
        }
        _ => {}
    }
}

fn clause(text: String, parent_id: &str, source: &str, kind: ClauseKind) -> SubStatement {
    SubStatement::new(
        Granularity::Clause,
        text,
        Some(parent_id.to_string()),
        source,
        Some(kind),
    )
}

fn push_select_clauses(select: &Select, parent_id: &str, source: &str, out: &mut Vec<SubStatement>) {
    let distinct = match &select.distinct {
        Some(d) => format!("{d} "),
        None => String::new(),
    };
    let items: Vec<String> = select.projection.iter().map(|i| i.to_string()).collect();
    let list = clause(
        format!("SELECT {distinct}{}", items.join(", ")),
        parent_id,
        source,
        ClauseKind::SelectList,
    );
    let list_id = list.id.clone();
    out.push(list);
    if items.len() > 1 {
        for item in items {
            out.push(sub_statement(item, &list_id, source, ClauseKind::SelectList));
        }
    }

    if !select.from.is_empty() {
        let relations: Vec<String> = select.from.iter().map(|t| t.relation.to_string()).collect();
        out.push(clause(
            format!("FROM {}", relations.join(", ")),
            parent_id,
            source,
            ClauseKind::From,
        ));
        for twj in &select.from {
            for join in &twj.joins {
                out.push(clause(join.to_string(), parent_id, source, ClauseKind::Join));
            }
        }
    }

    if let Some(selection) = &select.selection {
        push_predicate("WHERE", selection, parent_id, source, ClauseKind::Where, out);
    }
    if let GroupByExpr::Expressions(exprs, _) = &select.group_by {
        if !exprs.is_empty() {
            out.push(clause(select.group_by.to_string(), parent_id, source, ClauseKind::GroupBy));
        }
    } else {
        out.push(clause(select.group_by.to_string(), parent_id, source, ClauseKind::GroupBy));
    }
    if let Some(having) = &select.having {
        push_predicate("HAVING", having, parent_id, source, ClauseKind::Having, out);
    }
    if !select.named_window.is_empty() {
        let windows: Vec<String> = select.named_window.iter().map(|w| w.to_string()).collect();
        out.push(clause(
            format!("WINDOW {}", windows.join(", ")),
            parent_id,
            source,
            ClauseKind::Window,
        ));
    }
}

fn sub_statement(text: String, parent_id: &str, source: &str, kind: ClauseKind) -> SubStatement {
    SubStatement::new(
        Granularity::SubStatement,
        text,
        Some(parent_id.to_string()),
        source,
        Some(kind),
    )
}

fn push_predicate(
    keyword: &str,
    predicate: &Expr,
    parent_id: &str,
    source: &str,
    kind: ClauseKind,
    out: &mut Vec<SubStatement>,
) {
    let whole = clause(format!("{keyword} {predicate}"), parent_id, source, kind);
    let whole_id = whole.id.clone();
    out.push(whole);
    let mut conjuncts = Vec::new();
    split_conjuncts(predicate, &mut conjuncts);
    if conjuncts.len() > 1 {
        for (i, c) in conjuncts.iter().enumerate() {
            let lead = if i == 0 { keyword } else { "AND" };
            out.push(sub_statement(format!("{lead} {c}"), &whole_id, source, kind));
        }
    }
}

fn split_conjuncts<'a>(expr: &'a Expr, out: &mut Vec<&'a Expr>) {
    match expr {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And,
            right,
        } => {
            split_conjuncts(left, out);
            split_conjuncts(right, out);
        }
        other => out.push(other),
    }
}

/// Reassembles sub-queries into one statement: every id but the last
/// becomes a named CTE (its name taken from the matching `cte_header`
/// child), the last one is the final select.
pub fn recompose(subs: &[SubStatement], assembly: &[String]) -> Result<String, SqlError> {
    let Some((last, ctes)) = assembly.split_last() else {
        return Err(SqlError::NotAQuery("<empty assembly>".into()));
    };
    let lookup = |id: &str| -> Result<&SubStatement, SqlError> {
        subs.iter()
            .find(|s| s.id == id)
            .ok_or_else(|| SqlError::DanglingReference(id.to_string()))
    };
    let final_sub = lookup(last)?;
    if final_sub.granularity != Granularity::SubQuery {
        return Err(SqlError::NotAQuery(final_sub.text.clone()));
    }
    if ctes.is_empty() {
        return Ok(final_sub.text.clone());
    }
    let mut parts = Vec::with_capacity(ctes.len());
    for (pos, id) in ctes.iter().enumerate() {
        let sub = lookup(id)?;
        if sub.granularity != Granularity::SubQuery {
            return Err(SqlError::NotAQuery(sub.text.clone()));
        }
        // The k-th use of an id takes the k-th header with that parent, so
        // identical bodies under different names still recompose.
        let occurrence = ctes[..pos].iter().filter(|other| *other == id).count();
        let header = subs
            .iter()
            .filter(|s| s.parent_id.as_deref() == Some(id) && s.clause_kind == Some(ClauseKind::CteHeader))
            .nth(occurrence)
            .ok_or_else(|| SqlError::DanglingReference(format!("{id} (no CTE header)")))?;
        let name = header
            .bare_text()
            .trim()
            .strip_suffix('(')
            .and_then(|h| h.trim_end().strip_suffix("AS"))
            .map(str::trim)
            .ok_or_else(|| SqlError::NotAQuery(header.text.clone()))?;
        parts.push(format!("{name} AS ({})", sub.text));
    }
    let sql = format!("WITH {} {}", parts.join(", "), final_sub.text);
    parse(&sql, Dialect::Ansi)?;
    Ok(sql)
}

/// Assembly order of a decomposition: sub-query ids in document order.
pub fn assembly_order(subs: &[SubStatement]) -> Vec<String> {
    subs.iter()
        .filter(|s| s.granularity == Granularity::SubQuery)
        .map(|s| s.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::FIN_PERF_SQL;
    use crate::sqlkit::{parse, rewrite_to_ctes};

    fn decompose_sql(sql: &str) -> Vec<SubStatement> {
        let form = rewrite_to_ctes(&parse(sql, Dialect::Sqlite).unwrap()).unwrap();
        decompose(&form, "q1")
    }

    #[test]
    fn minimal_select() {
        let subs = decompose_sql("SELECT 1");
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].granularity, Granularity::SubQuery);
        assert_eq!(subs[0].parent_id, None);
        assert_eq!(subs[1].text, "...SELECT 1...");
        assert_eq!(subs[1].clause_kind, Some(ClauseKind::SelectList));
        assert_eq!(subs[1].parent_id.as_deref(), Some(subs[0].id.as_str()));
    }

    #[test]
    fn fin_perf_query_decomposition() {
        let subs = decompose_sql(FIN_PERF_SQL);
        let sub_queries: Vec<_> = subs
            .iter()
            .filter(|s| s.granularity == Granularity::SubQuery)
            .collect();
        assert_eq!(sub_queries.len(), 4);
        let financials = sub_queries[0];
        assert!(financials.text.contains("FROM SPORTS_FINANCIALS"));
        let wanted = fragment_key("...WHERE TO_CHAR(FIN_MONTH, 'YYYY\"Q\"Q') IN ('2023Q1', '2023Q2')...").unwrap();
        let where_child = subs.iter().find(|s| {
            s.clause_kind == Some(ClauseKind::Where)
                && fragment_key(&s.text).unwrap() == wanted
        });
        let where_child = where_child.expect("FINANCIALS where sub-statement");
        // Its parent is the FINANCIALS WHERE clause, whose parent is the sub-query.
        let clause = subs.iter().find(|s| Some(&s.id) == where_child.parent_id.as_ref()).unwrap();
        assert_eq!(clause.parent_id.as_deref(), Some(financials.id.as_str()));
        let header = subs
            .iter()
            .find(|s| s.clause_kind == Some(ClauseKind::CteHeader))
            .unwrap();
        assert_eq!(header.text, "...FINANCIALS AS (...");
    }

    #[test]
    fn order_by_clause_child() {
        let subs = decompose_sql(FIN_PERF_SQL);
        assert!(subs
            .iter()
            .any(|s| s.clause_kind == Some(ClauseKind::OrderBy) && s.text == "...ORDER BY SPORT_RANK..."));
    }

    #[test]
    fn affix_and_parent_discipline() {
        for q in crate::fixtures::round_trip_corpus() {
            for s in decompose_sql(q.sql) {
                if s.granularity == Granularity::SubQuery {
                    assert!(!s.affixed && s.parent_id.is_none() && s.clause_kind.is_none());
                } else {
                    assert!(s.affixed && s.parent_id.is_some());
                    assert!(s.text.starts_with("...") && s.text.ends_with("..."), "{}", s.text);
                }
            }
        }
    }

    #[test]
    fn ids_are_whitespace_insensitive() {
        let a = decompose_sql("SELECT a FROM t WHERE x = 1");
        let b = decompose_sql("select a\n  from t   where x=1");
        let ids_a: Vec<_> = a.iter().map(|s| &s.id).collect();
        let ids_b: Vec<_> = b.iter().map(|s| &s.id).collect();
        assert_eq!(ids_a, ids_b);
        let c = SubStatement::new(Granularity::Clause, "WHERE  x =  1".into(), None, "q", None);
        let d = SubStatement::new(Granularity::Clause, "where x = 1".into(), None, "q", None);
        assert_eq!(c.id, d.id);
    }

    #[test]
    fn recompose_single_sub_query_is_verbatim() {
        let subs = decompose_sql("SELECT a FROM t");
        let order = assembly_order(&subs);
        assert_eq!(recompose(&subs, &order).unwrap(), subs[0].text);
    }

    #[test]
    fn recompose_errors() {
        let subs = decompose_sql("SELECT a FROM t");
        assert!(matches!(
            recompose(&subs, &["nope".to_string()]),
            Err(SqlError::DanglingReference(_))
        ));
        assert!(matches!(
            recompose(&subs, &[subs[1].id.clone()]),
            Err(SqlError::NotAQuery(_))
        ));
    }

    #[test]
    fn recompose_fin_perf_in_original_order() {
        let subs = decompose_sql(FIN_PERF_SQL);
        let sql = recompose(&subs, &assembly_order(&subs)).unwrap();
        let original = parse(FIN_PERF_SQL, Dialect::Sqlite).unwrap();
        assert_eq!(parse(&sql, Dialect::Sqlite).unwrap(), original);
    }

    #[test]
    fn duplicate_bodies_under_different_names() {
        let sql = "WITH a AS (SELECT 1 AS x), b AS (SELECT 1 AS x) SELECT * FROM a JOIN b ON a.x = b.x";
        let subs = decompose_sql(sql);
        let rebuilt = recompose(&subs, &assembly_order(&subs)).unwrap();
        assert_eq!(
            parse(&rebuilt, Dialect::Sqlite).unwrap(),
            parse(sql, Dialect::Sqlite).unwrap()
        );
    }
}
