use std::collections::HashSet;
use std::ops::ControlFlow;

use serde::Serialize;
use sqlparser::ast::{
    visit_relations, Query, SetExpr, Statement, TableAlias, TableFactor, TableWithJoins,
};

use super::{parse_query, Dialect, SqlAst, SqlError};

/// A named common table expression in a flattened form.
#[derive(Debug, Clone, PartialEq)]
pub struct CteDef {
    pub name: String,
    /// Column list declared with the name, e.g. `x (a, b) AS (...)`.
    pub columns: Vec<String>,
    pub body: SqlAst,
}

/// A query rewritten as a flat, topologically ordered list of CTEs plus a
/// final statement without a WITH clause of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct CteForm {
    pub dialect: Dialect,
    pub ctes: Vec<CteDef>,
    pub final_select: SqlAst,
    /// Constructs left in place (correlated or lateral subqueries, name
    /// collisions that prevented hoisting).
    pub notes: Vec<String>,
}

#[derive(Serialize)]
struct CteSummary<'a> {
    name: &'a str,
    columns: &'a [String],
    body: String,
}

impl CteForm {
    /// Renders the form as a single SQL statement.
    pub fn render(&self) -> String {
        let final_sql = self.final_select.render();
        if self.ctes.is_empty() {
            return final_sql;
        }
        let ctes: Vec<String> = self
            .ctes
            .iter()
            .map(|c| format!("{} AS ({})", cte_header_name(&c.name, &c.columns), c.body.render()))
            .collect();
        format!("WITH {} {}", ctes.join(", "), final_sql)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let ctes: Vec<CteSummary<'_>> = self
            .ctes
            .iter()
            .map(|c| CteSummary {
                name: &c.name,
                columns: &c.columns,
                body: c.body.render(),
            })
            .collect();
        serde_json::json!({
            "dialect": self.dialect,
            "ctes": ctes,
            "final_select": self.final_select.render(),
            "notes": self.notes,
        })
    }
}

pub(crate) fn cte_header_name(name: &str, columns: &[String]) -> String {
    if columns.is_empty() {
        name.to_string()
    } else {
        format!("{} ({})", name, columns.join(", "))
    }
}

/// Hoists derived tables and WITH sub-queries into a flat CTE list.
///
/// Derived tables get `cte_<n>` names in hoist order (skipping any name
/// already used in the statement) and keep their alias at the reference
/// site. LATERAL derived tables and subqueries inside expressions stay
/// inline. Nested WITH clauses are hoisted only when their names are
/// unambiguous across the whole statement; otherwise the rewrite falls back
/// to the original structure with no new CTEs.
pub fn rewrite_to_ctes(ast: &SqlAst) -> Result<CteForm, SqlError> {
    let Statement::Query(query) = &ast.statement else {
        return Err(SqlError::UnsupportedConstruct(format!(
            "only SELECT-family statements can be rewritten, got `{}`",
            ast.statement
        )));
    };
    if query.with.as_ref().is_some_and(|w| w.recursive) {
        return Err(SqlError::UnsupportedConstruct("WITH RECURSIVE".into()));
    }
    let mut hoister = Hoister::new(&ast.statement, ast.dialect);
    match hoister.flatten_top(query.as_ref().clone()) {
        Ok(final_query) => Ok(CteForm {
            dialect: ast.dialect,
            ctes: hoister.ctes,
            final_select: SqlAst::from_query(final_query, ast.dialect),
            notes: hoister.notes,
        }),
        Err(Fallback(reason)) => degenerate(query, ast.dialect, reason),
    }
}

/// Checks the ordering invariant of a form: unique names, bodies referencing
/// only base tables or earlier CTEs, and a final statement without WITH.
pub fn check_topology(form: &CteForm) -> Result<(), String> {
    let names: Vec<String> = form.ctes.iter().map(|c| c.name.to_uppercase()).collect();
    let mut seen = HashSet::new();
    for name in &names {
        if !seen.insert(name.clone()) {
            return Err(format!("duplicate CTE name {name}"));
        }
    }
    for (i, cte) in form.ctes.iter().enumerate() {
        let mut bad = None;
        let _ = visit_relations(&cte.body.statement, |rel| {
            let rel_name = rel.to_string().to_uppercase();
            if let Some(j) = names.iter().position(|n| *n == rel_name) {
                if j >= i {
                    bad = Some(format!("CTE {} references {} defined at position {j}", cte.name, rel));
                    return ControlFlow::Break(());
                }
            }
            ControlFlow::Continue(())
        });
        if let Some(msg) = bad {
            return Err(msg);
        }
    }
    match form.final_select.query() {
        Some(q) if q.with.is_none() => Ok(()),
        Some(_) => Err("final statement carries its own WITH clause".into()),
        None => Err("final statement is not a query".into()),
    }
}

fn degenerate(query: &Query, dialect: Dialect, reason: String) -> Result<CteForm, SqlError> {
    let mut final_query = query.clone();
    let ctes = match final_query.with.take() {
        Some(with) => with
            .cte_tables
            .into_iter()
            .map(|cte| CteDef {
                name: cte.alias.name.value.clone(),
                columns: cte.alias.columns.iter().map(|c| c.name.value.clone()).collect(),
                body: SqlAst::from_query(*cte.query, dialect),
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(CteForm {
        dialect,
        ctes,
        final_select: SqlAst::from_query(final_query, dialect),
        notes: vec![format!("structure preserved: {reason}")],
    })
}

struct Fallback(String);

struct Hoister<'a> {
    statement: &'a Statement,
    dialect: Dialect,
    ctes: Vec<CteDef>,
    used: HashSet<String>,
    counter: usize,
    notes: Vec<String>,
}

impl<'a> Hoister<'a> {
    fn new(statement: &'a Statement, dialect: Dialect) -> Self {
        let mut used = HashSet::new();
        let _ = visit_relations(statement, |rel| {
            used.insert(rel.to_string().to_uppercase());
            for part in &rel.0 {
                used.insert(part.to_string().to_uppercase());
            }
            ControlFlow::<()>::Continue(())
        });
        collect_aliases(statement, &mut used);
        Hoister {
            statement,
            dialect,
            ctes: Vec::new(),
            used,
            counter: 0,
            notes: Vec::new(),
        }
    }

    fn fresh_name(&mut self) -> String {
        loop {
            self.counter += 1;
            let name = format!("cte_{}", self.counter);
            if self.used.insert(name.to_uppercase()) {
                return name;
            }
        }
    }

    fn flatten_top(&mut self, mut query: Query) -> Result<Query, Fallback> {
        if let Some(with) = query.with.take() {
            for cte in with.cte_tables {
                let body = self.flatten_query(*cte.query)?;
                self.push_cte(
                    cte.alias.name.value.clone(),
                    cte.alias.columns.iter().map(|c| c.name.value.clone()).collect(),
                    body,
                )?;
            }
        }
        self.flatten_set_expr(&mut query.body)?;
        Ok(query)
    }

    /// Flattens a query nested below the top level, hoisting its own WITH
    /// clause when the names are unambiguous.
    fn flatten_query(&mut self, mut query: Query) -> Result<Query, Fallback> {
        if let Some(with) = query.with.take() {
            if with.recursive {
                return Err(Fallback("nested WITH RECURSIVE".into()));
            }
            for cte in &with.cte_tables {
                let name = cte.alias.name.value.to_uppercase();
                let inside = count_refs(&Statement::Query(Box::new(with_restored(&query, &with))), &name);
                let total = count_refs(self.statement, &name);
                if inside != total || self.ctes.iter().any(|c| c.name.to_uppercase() == name) {
                    return Err(Fallback(format!(
                        "nested CTE {} is ambiguous after hoisting",
                        cte.alias.name
                    )));
                }
            }
            for cte in with.cte_tables {
                let body = self.flatten_query(*cte.query)?;
                self.push_cte(
                    cte.alias.name.value.clone(),
                    cte.alias.columns.iter().map(|c| c.name.value.clone()).collect(),
                    body,
                )?;
            }
        }
        self.flatten_set_expr(&mut query.body)?;
        Ok(query)
    }

    fn push_cte(&mut self, name: String, columns: Vec<String>, body: Query) -> Result<(), Fallback> {
        if self.ctes.iter().any(|c| c.name.eq_ignore_ascii_case(&name)) {
            return Err(Fallback(format!("duplicate CTE name {name}")));
        }
        self.used.insert(name.to_uppercase());
        self.ctes.push(CteDef {
            name,
            columns,
            body: SqlAst::from_query(body, self.dialect),
        });
        Ok(())
    }

    fn flatten_set_expr(&mut self, body: &mut SetExpr) -> Result<(), Fallback> {
        match body {
            SetExpr::Select(select) => {
                for twj in &mut select.from {
                    self.flatten_table_with_joins(twj)?;
                }
                Ok(())
            }
            SetExpr::Query(q) => {
                let flattened = self.flatten_query(q.as_ref().clone())?;
                **q = flattened;
                Ok(())
            }
            SetExpr::SetOperation { left, right, .. } => {
                self.flatten_set_expr(left)?;
                self.flatten_set_expr(right)
            }
            _ => Ok(()),
        }
    }

    fn flatten_table_with_joins(&mut self, twj: &mut TableWithJoins) -> Result<(), Fallback> {
        self.flatten_factor(&mut twj.relation)?;
        for join in &mut twj.joins {
            self.flatten_factor(&mut join.relation)?;
        }
        Ok(())
    }

    fn flatten_factor(&mut self, factor: &mut TableFactor) -> Result<(), Fallback> {
        match factor {
            TableFactor::Derived {
                lateral: false,
                subquery,
                alias,
                sample: None,
            } => {
                let body = self.flatten_query(subquery.as_ref().clone())?;
                let name = self.fresh_name();
                let (columns, site_alias) = match alias.take() {
                    Some(mut a) => {
                        let cols = a.columns.drain(..).map(|c| c.name.value).collect();
                        (cols, Some(a))
                    }
                    None => (Vec::new(), None),
                };
                self.ctes.push(CteDef {
                    name: name.clone(),
                    columns,
                    body: SqlAst::from_query(body, self.dialect),
                });
                *factor = table_reference(&name, site_alias, self.dialect);
                Ok(())
            }
            TableFactor::Derived { lateral: true, alias, .. } => {
                self.notes.push(format!(
                    "LATERAL derived table {} left inline",
                    alias.as_ref().map(|a| a.name.value.as_str()).unwrap_or("<anonymous>")
                ));
                Ok(())
            }
            TableFactor::NestedJoin { table_with_joins, .. } => {
                self.flatten_table_with_joins(table_with_joins)
            }
            _ => Ok(()),
        }
    }
}

fn with_restored(query: &Query, with: &sqlparser::ast::With) -> Query {
    let mut q = query.clone();
    q.with = Some(with.clone());
    q
}

fn count_refs(statement: &Statement, upper_name: &str) -> usize {
    let mut n = 0;
    let _ = visit_relations(statement, |rel| {
        if rel.to_string().to_uppercase() == upper_name {
            n += 1;
        }
        ControlFlow::<()>::Continue(())
    });
    n
}

fn collect_aliases(statement: &Statement, used: &mut HashSet<String>) {
    // Table aliases and CTE names share the relation namespace of the
    // generated names; scan the rendered tokens for `AS <ident>` pairs as a
    // cheap over-approximation.
    let text = statement.to_string();
    let mut words = text.split(|c: char| !(c.is_alphanumeric() || c == '_'));
    let mut prev_as = false;
    for w in words.by_ref() {
        if w.is_empty() {
            continue;
        }
        if prev_as {
            used.insert(w.to_uppercase());
        }
        prev_as = w.eq_ignore_ascii_case("AS");
        if w.to_ascii_lowercase().starts_with("cte_") {
            used.insert(w.to_uppercase());
        }
    }
}

fn table_reference(name: &str, alias: Option<TableAlias>, dialect: Dialect) -> TableFactor {
    let query = parse_query(&format!("SELECT * FROM {name}"), dialect)
        .expect("generated CTE names are valid identifiers");
    let SetExpr::Select(select) = *query.body else {
        unreachable!("SELECT * FROM parses to a select")
    };
    let mut factor = select
        .from
        .into_iter()
        .next()
        .expect("one relation")
        .relation;
    if let TableFactor::Table { alias: a, .. } = &mut factor {
        *a = alias.map(|alias| TableAlias { explicit: true, ..alias });
    }
    factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::FIN_PERF_SQL;
    use crate::sqlkit::parse;

    fn rewrite(sql: &str) -> CteForm {
        rewrite_to_ctes(&parse(sql, Dialect::Sqlite).unwrap()).unwrap()
    }

    #[test]
    fn single_derived_table_becomes_cte() {
        let form = rewrite("SELECT * FROM (SELECT a FROM t) x");
        assert_eq!(form.ctes.len(), 1);
        assert_eq!(form.ctes[0].name, "cte_1");
        assert_eq!(form.ctes[0].body.render(), "SELECT a FROM t");
        assert_eq!(form.final_select.render(), "SELECT * FROM cte_1 AS x");
        check_topology(&form).unwrap();
    }

    #[test]
    fn fin_perf_query_keeps_its_ctes() {
        let form = rewrite(FIN_PERF_SQL);
        let names: Vec<_> = form.ctes.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["FINANCIALS", "VIEWERSHIP", "CHANGE_IN_REVENUE"]);
        let original = parse(FIN_PERF_SQL, Dialect::Sqlite).unwrap();
        let mut expected_final = original.query().unwrap().clone();
        expected_final.with = None;
        assert_eq!(form.final_select.query().unwrap(), &expected_final);
        assert!(form.notes.is_empty());
    }

    #[test]
    fn nested_derived_tables_hoist_innermost_first() {
        let form = rewrite(
            "SELECT o.v FROM (SELECT i.v FROM (SELECT a AS v FROM t) i WHERE i.v > 1) o",
        );
        assert_eq!(form.ctes.len(), 2);
        assert_eq!(form.ctes[0].body.render(), "SELECT a AS v FROM t");
        assert_eq!(form.ctes[1].body.render(), "SELECT i.v FROM cte_1 AS i WHERE i.v > 1");
        assert_eq!(form.final_select.render(), "SELECT o.v FROM cte_2 AS o");
        check_topology(&form).unwrap();
    }

    #[test]
    fn derived_tables_inside_existing_ctes_are_placed_before_them() {
        let form = rewrite("WITH a AS (SELECT * FROM (SELECT x FROM t) s) SELECT * FROM a");
        let names: Vec<_> = form.ctes.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["cte_1", "a"]);
        check_topology(&form).unwrap();
    }

    #[test]
    fn generated_names_skip_existing_ones() {
        let form = rewrite("SELECT * FROM cte_1 JOIN (SELECT b FROM u) d ON cte_1.b = d.b");
        assert_eq!(form.ctes[0].name, "cte_2");
    }

    #[test]
    fn correlated_subqueries_stay_inline() {
        let sql = "SELECT f.a FROM t f WHERE f.b > (SELECT AVG(g.b) FROM t g WHERE g.a = f.a)";
        let form = rewrite(sql);
        assert!(form.ctes.is_empty());
        assert_eq!(form.final_select.render(), sql);
    }

    #[test]
    fn ambiguous_nested_with_degenerates() {
        let sql = "SELECT * FROM (WITH t AS (SELECT 1 AS a) SELECT a FROM t) x JOIN t ON t.a = x.a";
        let form = rewrite(sql);
        assert!(form.ctes.is_empty());
        assert_eq!(form.notes.len(), 1);
        assert_eq!(form.final_select.render(), parse(sql, Dialect::Sqlite).unwrap().render());
    }

    #[test]
    fn unambiguous_nested_with_is_hoisted() {
        let form = rewrite("SELECT * FROM (WITH inner_q AS (SELECT 1 AS a) SELECT a FROM inner_q) x");
        let names: Vec<_> = form.ctes.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["inner_q", "cte_1"]);
        check_topology(&form).unwrap();
    }

    #[test]
    fn recursive_and_non_query_statements_rejected() {
        let rec = parse(
            "WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT n + 1 FROM c WHERE n < 3) SELECT n FROM c",
            Dialect::Sqlite,
        )
        .unwrap();
        assert!(matches!(rewrite_to_ctes(&rec), Err(SqlError::UnsupportedConstruct(_))));
        let ins = parse("INSERT INTO t VALUES (1)", Dialect::Sqlite).unwrap();
        assert!(matches!(rewrite_to_ctes(&ins), Err(SqlError::UnsupportedConstruct(_))));
    }

    #[test]
    fn topology_check_detects_forward_reference() {
        let mut form = rewrite("WITH a AS (SELECT 1 AS x), b AS (SELECT x FROM a) SELECT * FROM b");
        form.ctes.swap(0, 1);
        assert!(check_topology(&form).is_err());
    }
}
