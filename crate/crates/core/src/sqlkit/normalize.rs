use sqlparser::dialect::GenericDialect;
use sqlparser::keywords::Keyword;
use sqlparser::tokenizer::{Token, Tokenizer};

use super::{parse, SqlError, SyntaxError};
use crate::sqlkit::Dialect;

/// Canonical rendering of a full statement or a fragment: uppercase
/// keywords, single spaces, no trailing semicolon.
///
/// Full statements go through the parser and its renderer; anything that
/// does not parse as a statement (affixed sub-statements, bare clauses) is
/// normalized token by token.
pub fn normalize(sql_text: &str) -> Result<String, SqlError> {
    match parse(sql_text, Dialect::Sqlite) {
        Ok(ast) => Ok(ast.render()),
        Err(SqlError::MultipleStatements(n)) => Err(SqlError::MultipleStatements(n)),
        Err(_) => fragment_key(sql_text),
    }
}

/// Token-level canonical form used for content hashing. Total over any text
/// the tokenizer accepts.
pub fn fragment_key(text: &str) -> Result<String, SqlError> {
    let tokens = Tokenizer::new(&GenericDialect {}, text)
        .tokenize()
        .map_err(|e| {
            SqlError::Syntax(SyntaxError {
                message: e.message.clone(),
                line: e.location.line,
                column: e.location.column,
                token: None,
            })
        })?;
    let mut pieces: Vec<String> = tokens
        .into_iter()
        .filter(|t| !matches!(t, Token::Whitespace(_)))
        .map(|t| match t {
            Token::Word(w) if w.quote_style.is_none() && w.keyword != Keyword::NoKeyword => {
                w.value.to_uppercase()
            }
            other => other.to_string(),
        })
        .collect();
    while pieces.last().map(String::as_str) == Some(";") {
        pieces.pop();
    }
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<&str> = None;
    for piece in &pieces {
        if let Some(p) = prev {
            let tight = matches!(piece.as_str(), "," | ")" | "." | ";")
                || p == "("
                || (p == "." && !piece.starts_with(|c: char| c.is_ascii_digit() || c == '_'))
                || (piece == "(" && is_word(p));
            if !tight {
                out.push(' ');
            }
        }
        out.push_str(piece);
        prev = Some(piece);
    }
    Ok(out)
}

fn is_word(piece: &str) -> bool {
    piece
        .chars()
        .next()
        .is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '"' || c == '`')
}
