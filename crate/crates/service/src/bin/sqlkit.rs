//! `sqlkit decompose`: CTE rewrite and sub-statement decomposition of one
//! SQL query, printed as JSON.

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use genedit_core::sqlkit::{assembly_order, decompose, parse, recompose, rewrite_to_ctes, Dialect};

#[derive(Parser)]
#[command(name = "sqlkit", about = "SQL rewriting and decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DialectArg {
    Sqlite,
    Ansi,
    Snowflake,
}

impl From<DialectArg> for Dialect {
    fn from(d: DialectArg) -> Self {
        match d {
            DialectArg::Sqlite => Dialect::Sqlite,
            DialectArg::Ansi => Dialect::Ansi,
            DialectArg::Snowflake => Dialect::Snowflake,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite to CTE form and list the sub-statements.
    Decompose {
        /// SQL file; stdin when absent or `-`.
        file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sqlite")]
        dialect: DialectArg,
        #[arg(long, default_value = "q")]
        source_id: String,
    },
}

fn read_input(file: Option<PathBuf>) -> std::io::Result<String> {
    match file {
        Some(p) if p.as_os_str() != "-" => std::fs::read_to_string(p),
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn main() -> ExitCode {
    let Command::Decompose { file, dialect, source_id } = Cli::parse().command;
    let sql = match read_input(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("sqlkit: {e}");
            return ExitCode::from(2);
        }
    };
    let form = match parse(&sql, dialect.into()).and_then(|ast| rewrite_to_ctes(&ast)) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("sqlkit: {e}");
            return ExitCode::FAILURE;
        }
    };
    let subs = decompose(&form, &source_id);
    let assembly = assembly_order(&subs);
    let recomposed = recompose(&subs, &assembly).map_err(|e| e.to_string());
    let out = json!({
        "cte_form": form.to_json(),
        "cte_sql": form.render(),
        "substatements": subs,
        "assembly": assembly,
        "recomposed": recomposed.as_ref().ok(),
        "recompose_error": recomposed.as_ref().err(),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    ExitCode::SUCCESS
}
