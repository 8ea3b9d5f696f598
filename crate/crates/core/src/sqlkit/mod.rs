//! SQL parsing, CTE rewriting, decomposition into affixed sub-statements and
//! recomposition.
//!
//! Parsing and rendering are delegated to `sqlparser`; everything that turns
//! a query into the knowledge set's example units lives here.

mod decompose;
mod normalize;
mod rewrite;

use std::fmt;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{Query, Statement};
use sqlparser::dialect::{GenericDialect, SQLiteDialect, SnowflakeDialect};
use sqlparser::parser::{Parser, ParserError};
use sqlparser::tokenizer::{Token, Tokenizer};

pub use decompose::{
    assembly_order, decompose, recompose, substatement_id, ClauseKind, Granularity, SubStatement, AFFIX,
};
pub(crate) use decompose::{affix, strip_affix};
pub use normalize::{fragment_key, normalize};
pub use rewrite::{check_topology, rewrite_to_ctes, CteDef, CteForm};

/// Dialect tag attached to every parsed statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Dialect {
    #[serde(rename = "ansi")]
    Ansi,
    #[default]
    #[serde(rename = "sqlite-compatible")]
    Sqlite,
    #[serde(rename = "snowflake-compatible")]
    Snowflake,
}

impl Dialect {
    pub fn as_str(self) -> &'static str {
        match self {
            Dialect::Ansi => "ansi",
            Dialect::Sqlite => "sqlite-compatible",
            Dialect::Snowflake => "snowflake-compatible",
        }
    }

    pub(crate) fn parser_dialect(self) -> Box<dyn sqlparser::dialect::Dialect> {
        match self {
            Dialect::Ansi => Box::new(GenericDialect {}),
            Dialect::Sqlite => Box::new(SQLiteDialect {}),
            Dialect::Snowflake => Box::new(SnowflakeDialect {}),
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ansi" => Ok(Dialect::Ansi),
            "sqlite" | "sqlite-compatible" => Ok(Dialect::Sqlite),
            "snowflake" | "snowflake-compatible" => Ok(Dialect::Snowflake),
            other => Err(format!("unknown dialect tag `{other}`")),
        }
    }
}

/// A syntax error with its position in the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxError {
    pub message: String,
    pub line: u64,
    pub column: u64,
    /// The offending token, when the parser names one.
    pub token: Option<String>,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at line {}, column {}: {}",
            self.line, self.column, self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SqlError {
    #[error("{0}")]
    Syntax(SyntaxError),
    #[error("expected exactly one statement, found {0}")]
    MultipleStatements(usize),
    #[error("empty SQL text")]
    Empty,
    #[error("unsupported construct: {0}")]
    UnsupportedConstruct(String),
    #[error("dangling reference to sub-query `{0}`")]
    DanglingReference(String),
    #[error("`{0}` is not a query")]
    NotAQuery(String),
}

/// One parsed SQL statement together with the dialect it was parsed under.
#[derive(Debug, Clone, PartialEq)]
pub struct SqlAst {
    pub statement: Statement,
    pub dialect: Dialect,
}

impl SqlAst {
    pub fn render(&self) -> String {
        self.statement.to_string()
    }

    pub fn query(&self) -> Option<&Query> {
        match &self.statement {
            Statement::Query(q) => Some(q),
            _ => None,
        }
    }

    pub(crate) fn from_query(query: Query, dialect: Dialect) -> Self {
        SqlAst {
            statement: Statement::Query(Box::new(query)),
            dialect,
        }
    }
}

impl fmt::Display for SqlAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.statement.fmt(f)
    }
}

/// Parses exactly one statement.
pub fn parse(sql_text: &str, dialect: Dialect) -> Result<SqlAst, SqlError> {
    if sql_text.trim().trim_end_matches(';').trim().is_empty() {
        return Err(SqlError::Empty);
    }
    let parser_dialect = dialect.parser_dialect();
    let mut statements = Parser::parse_sql(parser_dialect.as_ref(), sql_text)
        .map_err(|e| SqlError::Syntax(syntax_error(sql_text, dialect, e)))?;
    match statements.len() {
        1 => Ok(SqlAst {
            statement: statements.remove(0),
            dialect,
        }),
        0 => Err(SqlError::Empty),
        n => Err(SqlError::MultipleStatements(n)),
    }
}

/// Parses `sql_text` as a query (SELECT-family statement).
pub fn parse_query(sql_text: &str, dialect: Dialect) -> Result<Query, SqlError> {
    let ast = parse(sql_text, dialect)?;
    match ast.statement {
        Statement::Query(q) => Ok(*q),
        other => Err(SqlError::NotAQuery(other.to_string())),
    }
}

/// Returns every syntax problem of `sql_text`; empty iff it parses as one
/// statement.
pub fn validate(sql_text: &str, dialect: Dialect) -> Vec<SyntaxError> {
    match parse(sql_text, dialect) {
        Ok(_) => Vec::new(),
        Err(SqlError::Syntax(e)) => vec![e],
        Err(SqlError::MultipleStatements(n)) => vec![SyntaxError {
            message: format!("expected exactly one statement, found {n}"),
            line: 1,
            column: 1,
            token: Some(";".into()),
        }],
        Err(other) => vec![SyntaxError {
            message: other.to_string(),
            line: 1,
            column: 1,
            token: None,
        }],
    }
}

/// Table names referenced anywhere in a query, in first-seen order.
pub fn referenced_tables(sql_text: &str, dialect: Dialect) -> Vec<String> {
    let Ok(ast) = parse(sql_text, dialect) else {
        return Vec::new();
    };
    let mut names: Vec<String> = Vec::new();
    let _ = sqlparser::ast::visit_relations(&ast.statement, |rel| {
        let name = rel.to_string();
        if !names.iter().any(|n| n.eq_ignore_ascii_case(&name)) {
            names.push(name);
        }
        std::ops::ControlFlow::<()>::Continue(())
    });
    names
}

fn syntax_error(sql_text: &str, dialect: Dialect, err: ParserError) -> SyntaxError {
    let message = match &err {
        ParserError::TokenizerError(m) | ParserError::ParserError(m) => m.clone(),
        ParserError::RecursionLimitExceeded => "recursion limit exceeded".to_string(),
    };
    let token = message
        .split("found: ")
        .nth(1)
        .map(|rest| rest.split(" at Line:").next().unwrap_or(rest).trim().to_string())
        .filter(|t| !t.is_empty());
    let position = position_from_message(&message)
        .or_else(|| token.as_deref().and_then(|t| locate_token(sql_text, dialect, t)))
        .unwrap_or_else(|| end_position(sql_text));
    let message = match message.find(" at Line:") {
        Some(idx) => message[..idx].to_string(),
        None => message,
    };
    SyntaxError {
        message,
        line: position.0,
        column: position.1,
        token,
    }
}

fn position_from_message(message: &str) -> Option<(u64, u64)> {
    let rest = message.split("Line: ").nth(1)?;
    let (line, rest) = rest.split_once(", Column: ")?;
    let column: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    Some((line.trim().parse().ok()?, column.parse().ok()?))
}

fn locate_token(sql_text: &str, dialect: Dialect, token: &str) -> Option<(u64, u64)> {
    let parser_dialect = dialect.parser_dialect();
    let tokens = Tokenizer::new(parser_dialect.as_ref(), sql_text)
        .tokenize_with_location()
        .ok()?;
    tokens
        .iter()
        .filter(|t| !matches!(t.token, Token::Whitespace(_)))
        .skip(1)
        .find(|t| t.token.to_string().eq_ignore_ascii_case(token))
        .map(|t| (t.span.start.line, t.span.start.column))
}

fn end_position(sql_text: &str) -> (u64, u64) {
    let line = sql_text.lines().count().max(1) as u64;
    let column = sql_text.lines().last().map(|l| l.chars().count()).unwrap_or(0) as u64 + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{FIN_PERF_SQL, FIN_PERF_SQL_VERBATIM};

    #[test]
    fn parses_minimal_select() {
        let ast = parse("SELECT 1", Dialect::Sqlite).unwrap();
        let q = ast.query().unwrap();
        match q.body.as_ref() {
            sqlparser::ast::SetExpr::Select(s) => assert_eq!(s.projection.len(), 1),
            other => panic!("unexpected body {other}"),
        }
    }

    #[test]
    fn fin_perf_query_has_three_ctes() {
        let ast = parse(FIN_PERF_SQL, Dialect::Snowflake).unwrap();
        let with = ast.query().unwrap().with.as_ref().unwrap();
        let names: Vec<_> = with.cte_tables.iter().map(|c| c.alias.name.value.clone()).collect();
        assert_eq!(names, ["FINANCIALS", "VIEWERSHIP", "CHANGE_IN_REVENUE"]);
    }

    #[test]
    fn verbatim_fin_perf_text_is_unbalanced() {
        let err = parse(FIN_PERF_SQL_VERBATIM, Dialect::Snowflake).unwrap_err();
        assert!(matches!(err, SqlError::Syntax(_)), "{err:?}");
    }

    #[test]
    fn malformed_select_is_a_syntax_error() {
        match parse("SELECT FROM", Dialect::Sqlite) {
            Err(SqlError::Syntax(e)) => {
                assert_eq!(e.token.as_deref(), Some("FROM"));
                assert_eq!((e.line, e.column), (1, 8));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multiple_statements_rejected() {
        assert_eq!(
            parse("SELECT 1; SELECT 2", Dialect::Sqlite),
            Err(SqlError::MultipleStatements(2))
        );
    }

    #[test]
    fn validate_reports_unexpected_token() {
        assert!(validate("SELECT 1", Dialect::Sqlite).is_empty());
        let errors = validate("SELEC 1", Dialect::Sqlite);
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].token.as_deref(), Some("SELEC"));
        assert!(errors[0].message.contains("SELEC"));
    }

    #[test]
    fn render_then_parse_is_structurally_equal() {
        for query in crate::fixtures::round_trip_corpus() {
            let ast = parse(query.sql, Dialect::Sqlite).unwrap();
            let again = parse(&ast.render(), Dialect::Sqlite).unwrap();
            assert_eq!(ast, again, "{}", query.id);
        }
    }
}
