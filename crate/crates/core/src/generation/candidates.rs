use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::exec::{CellKey, ResultSet, SqlExecutor};
use crate::provider::{task, ChatProvider, Message, ProviderError, ProviderRequest};
use crate::sqlkit::{validate, Dialect, SyntaxError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExecOutcome {
    NotExecuted,
    Ok { rows: ResultSet },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub sql_text: String,
    pub syntax_errors: Vec<SyntaxError>,
    pub exec_outcome: ExecOutcome,
}

impl Candidate {
    pub fn new(index: usize, sql_text: String, dialect: Dialect) -> Self {
        let syntax_errors = validate(&sql_text, dialect);
        Candidate { index, sql_text, syntax_errors, exec_outcome: ExecOutcome::NotExecuted }
    }

    /// Error strings fed back to the model on retry.
    pub fn errors(&self) -> Vec<String> {
        let mut out: Vec<String> = self.syntax_errors.iter().map(|e| e.to_string()).collect();
        if let ExecOutcome::Error { message } = &self.exec_outcome {
            out.push(message.clone());
        }
        out
    }

    pub fn succeeded(&self) -> bool {
        matches!(self.exec_outcome, ExecOutcome::Ok { .. })
    }
}

/// First fenced block, else the whole reply.
pub fn extract_sql(reply: &str) -> String {
    super::fenced_block(reply).unwrap_or(reply).trim().to_string()
}

const SQL_SYSTEM: &str = "Write one SQL query that answers the question, following the plan, \
instructions and examples. Reply with the query in a ```sql fenced block.";

/// Operator 7: `n` completions of the assembled prompt, in emission order.
pub fn generate_sql(
    prompt: &str,
    provider: &dyn ChatProvider,
    n: usize,
    temperature: f64,
    dialect: Dialect,
) -> Result<Vec<Candidate>, ProviderError> {
    let temperature = if n > 1 { temperature } else { 0.0 };
    (0..n.max(1))
        .map(|index| {
            let request = ProviderRequest::new(
                task::GENERATE_SQL,
                vec![Message::system(SQL_SYSTEM), Message::user(prompt)],
            )
            .with_temperature(temperature);
            let reply = provider.complete(&request)?;
            Ok(Candidate::new(index, extract_sql(&reply.text), dialect))
        })
        .collect()
}

/// Execution-consistency vote over outcomes (`None` = failed). Returns the
/// index of the lowest-indexed member of the largest agreeing group.
pub fn vote(outcomes: &[Option<Vec<Vec<CellKey>>>]) -> Option<usize> {
    let mut groups: BTreeMap<&Vec<Vec<CellKey>>, (usize, usize)> = BTreeMap::new();
    for (i, o) in outcomes.iter().enumerate() {
        if let Some(key) = o {
            let entry = groups.entry(key).or_insert((0, i));
            entry.0 += 1;
        }
    }
    groups
        .values()
        .max_by(|(na, ia), (nb, ib)| na.cmp(nb).then_with(|| ib.cmp(ia)))
        .map(|&(_, first)| first)
}

/// Executes syntactically valid candidates and picks the majority result.
/// When nothing succeeds the first candidate is returned.
pub fn select_best(candidates: &mut [Candidate], executor: &dyn SqlExecutor, db_id: &str) -> usize {
    for c in candidates.iter_mut() {
        if c.syntax_errors.is_empty() {
            c.exec_outcome = match executor.execute(db_id, &c.sql_text) {
                Ok(rows) => ExecOutcome::Ok { rows },
                Err(e) => ExecOutcome::Error { message: e.to_string() },
            };
        }
    }
    let outcomes: Vec<Option<Vec<Vec<CellKey>>>> = candidates
        .iter()
        .map(|c| match &c.exec_outcome {
            ExecOutcome::Ok { rows } => Some(rows.multiset_key()),
            _ => None,
        })
        .collect();
    vote(&outcomes).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::SqliteExecutor;
    use crate::provider::{ScriptRule, ScriptedProvider};
    use proptest::prelude::*;

    fn key(n: i64) -> Option<Vec<Vec<CellKey>>> {
        Some(vec![vec![crate::exec::Cell::Int(n).key()]])
    }

    /// Brute force: for each candidate count how many others agree; best
    /// count wins, ties to the smaller index.
    fn oracle(outcomes: &[Option<Vec<Vec<CellKey>>>]) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (i, o) in outcomes.iter().enumerate() {
            let Some(k) = o else { continue };
            let n = outcomes.iter().filter(|x| x.as_ref() == Some(k)).count();
            if best.map_or(true, |(bn, _)| n > bn) {
                best = Some((n, i));
            }
        }
        best.map(|(_, i)| i)
    }

    #[test]
    fn vote_matches_brute_force_on_all_partitions_up_to_three() {
        let alphabet = [None, key(1), key(2), key(3)];
        for len in 1..=3usize {
            for code in 0..alphabet.len().pow(len as u32) {
                let mut c = code;
                let outcomes: Vec<_> = (0..len)
                    .map(|_| {
                        let o = alphabet[c % alphabet.len()].clone();
                        c /= alphabet.len();
                        o
                    })
                    .collect();
                assert_eq!(vote(&outcomes), oracle(&outcomes), "{outcomes:?}");
            }
        }
    }

    #[test]
    fn majority_pair_wins() {
        assert_eq!(vote(&[key(1), key(2), key(2)]), Some(1));
        assert_eq!(vote(&[key(2), key(1), key(2)]), Some(0));
    }

    #[test]
    fn single_valid_and_all_invalid() {
        let exec = SqliteExecutor::with_fixtures();
        let mut one = vec![Candidate::new(0, "SELECT 1".into(), Dialect::Sqlite)];
        assert_eq!(select_best(&mut one, &exec, "sports"), 0);
        assert!(one[0].succeeded());

        let mut bad = vec![
            Candidate::new(0, "SELEC 1".into(), Dialect::Sqlite),
            Candidate::new(1, "SELECT FROM".into(), Dialect::Sqlite),
        ];
        assert_eq!(select_best(&mut bad, &exec, "sports"), 0);
        assert_eq!(bad[0].exec_outcome, ExecOutcome::NotExecuted);
        assert_eq!(bad[0].errors().len(), 1);
    }

    #[test]
    fn generation_extracts_and_validates() {
        let p = ScriptedProvider::strict(vec![
            ScriptRule::new(task::GENERATE_SQL, "```sql\nSELECT 1\n```").times(1),
            ScriptRule::new(task::GENERATE_SQL, "SELEC 1").times(1),
            ScriptRule::new(task::GENERATE_SQL, "SELECT 2;"),
        ]);
        let c = generate_sql("p", &p, 3, 0.7, Dialect::Sqlite).unwrap();
        assert_eq!(c.iter().map(|c| c.sql_text.as_str()).collect::<Vec<_>>(), ["SELECT 1", "SELEC 1", "SELECT 2;"]);
        assert_eq!(c.iter().map(|c| c.syntax_errors.len()).collect::<Vec<_>>(), [0, 1, 0]);
        assert_eq!(c.iter().map(|c| c.index).collect::<Vec<_>>(), [0, 1, 2]);
    }

    fn outcomes() -> impl Strategy<Value = Vec<Option<Vec<Vec<CellKey>>>>> {
        proptest::collection::vec(proptest::option::of(0i64..4).prop_map(|o| o.and_then(key)), 1..7)
    }

    fn winner(o: &[Option<Vec<Vec<CellKey>>>]) -> Option<Vec<Vec<CellKey>>> {
        vote(o).and_then(|i| o[i].clone())
    }

    proptest! {
        #[test]
        fn duplicating_the_winner_keeps_it(o in outcomes(), at in 0usize..8) {
            if let Some(w) = vote(&o) {
                let mut dup = o.clone();
                dup.insert(at.min(dup.len()), o[w].clone());
                prop_assert_eq!(winner(&dup), winner(&o));
            }
        }

        #[test]
        fn duplicating_every_candidate_keeps_the_winner(o in outcomes()) {
            let doubled: Vec<_> = o.iter().flat_map(|x| [x.clone(), x.clone()]).collect();
            prop_assert_eq!(winner(&doubled), winner(&o));
        }

        #[test]
        fn duplicating_a_losing_minority_never_flips_a_strict_majority(o in outcomes(), pick in 0usize..7) {
            if let Some(w) = vote(&o) {
                let wk = o[w].clone();
                let n = o.iter().filter(|x| **x == wk).count();
                let second = o.iter().filter(|x| x.is_some() && **x != wk)
                    .map(|x| o.iter().filter(|y| *y == x).count()).max().unwrap_or(0);
                if n > second + 1 {
                    let mut dup = o.clone();
                    dup.push(o[pick % o.len()].clone());
                    prop_assert_eq!(winner(&dup), wk);
                }
            }
        }
    }
}
