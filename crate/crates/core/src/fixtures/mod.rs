//! Seeded databases, the round-trip corpus and the fin-perf knowledge
//! fixture shared by unit tests, integration tests and the acceptance run.

pub mod corpus;
pub mod databases;
pub mod finperf;
pub mod minibench;

pub use corpus::{round_trip_corpus, CorpusQuery};
pub use databases::{retail_seed_sql, sports_seed_sql, SPORTS_ORGS};

/// Fin-perf query, minimally repaired so it parses and runs.
pub const FIN_PERF_SQL: &str = include_str!("data/fin_perf.sql");

/// The same query exactly as printed, unbalanced parenthesis included.
pub const FIN_PERF_SQL_VERBATIM: &str = include_str!("data/fin_perf_verbatim.sql");

/// The fin-perf query before the ownership feedback: every organisation in
/// Canada, not only the holding company's own.
pub fn fin_perf_all_orgs() -> String {
    FIN_PERF_SQL.replace("\n      AND OWNERSHIP_FLAG_COLUMN = 'COC'", "")
}
