use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::embed::{cosine, embed_text};
use crate::knowledge::{InstructionRecord, Intent};
use crate::provider::{ask, task, ChatProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformulatedQuery {
    pub original: String,
    pub canonical: String,
    pub transformations: Vec<String>,
}

const PREFIX: &str = "Show me";
const INTERROGATIVES: &[&str] = &["what are", "identify", "list"];

const REFORMULATE_SYSTEM: &str = "Rewrite the user's data question in the company's canonical format. \
The rewrite must begin with \"Show me\", keep every entity, filter, period and acronym of the original, \
and must not answer the question. Reply with the rewritten question only.";

fn strip_prefix_ci<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let head = text.get(..prefix.len())?;
    if !head.eq_ignore_ascii_case(prefix) {
        return None;
    }
    let rest = &text[prefix.len()..];
    match rest.chars().next() {
        None => Some(rest),
        Some(c) if !c.is_alphanumeric() => Some(rest.trim_start()),
        Some(_) => None,
    }
}

/// Deterministic canonical form: `Show me` plus the query with a leading
/// interrogative removed.
pub fn canonical_fallback(query: &str) -> (String, Vec<String>) {
    let q = query.trim();
    let mut notes = Vec::new();
    if let Some(rest) = strip_prefix_ci(q, PREFIX) {
        if !q.starts_with(PREFIX) {
            notes.push("normalized `Show me` capitalization".to_string());
        }
        return (join_prefix(rest), notes);
    }
    let mut body = q;
    for word in INTERROGATIVES {
        if let Some(rest) = strip_prefix_ci(q, word) {
            notes.push(format!("stripped leading `{word}`"));
            body = rest;
            break;
        }
    }
    notes.push("prefixed `Show me`".to_string());
    (join_prefix(body), notes)
}

fn join_prefix(rest: &str) -> String {
    if rest.is_empty() {
        PREFIX.to_string()
    } else {
        format!("{PREFIX} {rest}")
    }
}

/// Operator 1. Asks the provider for the canonical rewrite and falls back
/// to the deterministic rule when the reply is empty or fails.
pub fn reformulate(
    query: &str,
    provider: &dyn ChatProvider,
    hints: &[&InstructionRecord],
) -> ReformulatedQuery {
    let mut user = String::new();
    if !hints.is_empty() {
        user.push_str("GUIDELINES:\n");
        for h in hints {
            user.push_str(&format!("- {}\n", h.text));
        }
    }
    user.push_str(&format!("QUESTION: {}", query.trim()));
    let mut transformations = Vec::new();
    let reply = match ask(provider, task::REFORMULATE, REFORMULATE_SYSTEM, user) {
        Ok(text) => first_line(&text),
        Err(e) => {
            transformations.push(format!("provider error: {e}"));
            String::new()
        }
    };
    let source = if reply.is_empty() {
        transformations.push("fallback rule applied".to_string());
        query.to_string()
    } else {
        transformations.push("provider rewrite".to_string());
        reply
    };
    let (canonical, notes) = canonical_fallback(&source);
    transformations.extend(notes);
    ReformulatedQuery {
        original: query.to_string(),
        canonical,
        transformations,
    }
}

fn first_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .trim_matches('"')
        .trim()
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntentSelection {
    pub selected: BTreeSet<String>,
    /// Cosine score per intent, ordered like the input intents.
    pub scores: Vec<(String, f64)>,
    pub named_by_provider: BTreeSet<String>,
}

const CLASSIFY_SYSTEM: &str = "Name the intents that apply to the question. \
Reply with a JSON array of intent names taken from the list, or an empty array.";

/// Operator 2. Multi-label: cosine at or above `theta`, any intent the
/// provider names, and always the best-scoring intent.
pub fn classify_intents(
    rq: &ReformulatedQuery,
    intents: &[Intent],
    provider: Option<&dyn ChatProvider>,
    theta: f64,
    hints: &[&InstructionRecord],
) -> IntentSelection {
    let query = embed_text(&rq.canonical);
    let scores: Vec<(String, f64)> = intents
        .iter()
        .map(|i| {
            let e = embed_text(&format!("{} {}", i.name, i.description));
            (i.id.clone(), cosine(&query, &e))
        })
        .collect();
    let mut selected: BTreeSet<String> =
        scores.iter().filter(|(_, s)| *s >= theta).map(|(id, _)| id.clone()).collect();
    let best = scores
        .iter()
        .max_by(|(ia, a), (ib, b)| a.total_cmp(b).then_with(|| ib.cmp(ia)));
    if let Some((id, _)) = best {
        selected.insert(id.clone());
    }
    let mut named = BTreeSet::new();
    if let (Some(provider), false) = (provider, intents.is_empty()) {
        let mut user = String::new();
        for h in hints {
            user.push_str(&format!("GUIDELINE: {}\n", h.text));
        }
        user.push_str("INTENTS:\n");
        for i in intents {
            user.push_str(&format!("- {}: {}\n", i.name, i.description));
        }
        user.push_str(&format!("QUESTION: {}", rq.canonical));
        if let Ok(reply) = ask(provider, task::CLASSIFY_INTENTS, CLASSIFY_SYSTEM, user) {
            let names: Vec<String> = crate::knowledge::ingest::first_json::<Vec<String>>(&reply)
                .unwrap_or_else(|| reply.lines().map(|l| l.trim_start_matches('-').trim().to_string()).collect());
            for name in names {
                if let Some(i) = intents.iter().find(|i| i.name.eq_ignore_ascii_case(name.trim())) {
                    named.insert(i.id.clone());
                }
            }
        }
    }
    selected.extend(named.iter().cloned());
    IntentSelection { selected, scores, named_by_provider: named }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{ScriptRule, ScriptedProvider};
    use proptest::prelude::*;

    #[test]
    fn fallback_rule_by_hand() {
        assert_eq!(canonical_fallback("List users").0, "Show me users");
        assert_eq!(canonical_fallback("Show me all teams").0, "Show me all teams");
        assert_eq!(canonical_fallback("what are the top products?").0, "Show me the top products?");
        assert_eq!(canonical_fallback("Listings by city").0, "Show me Listings by city");
    }

    #[test]
    fn fin_perf_query_is_canonical() {
        let p = ScriptedProvider::fallback(vec![]);
        let rq = reformulate(
            "Identify our 5 sports organisations with the best and worst QoQFP in Canada for Q2 2023.",
            &p,
            &[],
        );
        assert!(rq.canonical.starts_with("Show me"));
        assert_eq!(
            rq.canonical,
            "Show me our 5 sports organisations with the best and worst QoQFP in Canada for Q2 2023."
        );
    }

    #[test]
    fn already_canonical_is_unchanged() {
        let p = ScriptedProvider::fallback(vec![]);
        assert_eq!(reformulate("Show me all teams", &p, &[]).canonical, "Show me all teams");
    }

    #[test]
    fn provider_rewrite_is_used_and_prefix_enforced() {
        let p = ScriptedProvider::strict(vec![ScriptRule::new(task::REFORMULATE, "teams in Canada")]);
        let rq = reformulate("which teams are Canadian", &p, &[]);
        assert_eq!(rq.canonical, "Show me teams in Canada");
        let failing = ScriptedProvider::strict(vec![]);
        let rq = reformulate("List users", &failing, &[]);
        assert_eq!(rq.canonical, "Show me users");
        assert!(rq.transformations[0].starts_with("provider error"));
    }

    fn rq(text: &str) -> ReformulatedQuery {
        ReformulatedQuery { original: text.into(), canonical: text.into(), transformations: vec![] }
    }

    #[test]
    fn single_intent_is_always_returned() {
        let intents = vec![Intent::new("TV viewership numbers", "audience counts", &[])];
        let sel = classify_intents(&rq("Show me revenue"), &intents, None, 0.99, &[]);
        assert_eq!(sel.selected.len(), 1);
    }

    #[test]
    fn fin_perf_selects_financial_performance() {
        let intents = vec![
            Intent::new("financial performance", "revenue, profit and quarter over quarter financial results", &[]),
            Intent::new("TV viewership numbers", "audience and views of broadcasts", &[]),
        ];
        let sel = classify_intents(
            &rq("Show me our 5 sports organisations with the best and worst QoQFP in Canada for Q2 2023 financial performance"),
            &intents,
            None,
            0.30,
            &[],
        );
        assert!(sel.selected.contains("intent:financial_performance"));
    }

    #[test]
    fn provider_named_intents_are_added() {
        let intents = vec![
            Intent::new("alpha", "aaa", &[]),
            Intent::new("beta", "bbb", &[]),
        ];
        let p = ScriptedProvider::strict(vec![ScriptRule::new(task::CLASSIFY_INTENTS, "[\"beta\", \"ghost\"]")]);
        let sel = classify_intents(&rq("Show me aaa"), &intents, Some(&p), 0.99, &[]);
        assert!(sel.selected.contains("intent:beta"));
        assert!(sel.selected.contains("intent:alpha"));
        assert_eq!(sel.named_by_provider.len(), 1);
    }

    proptest! {
        #[test]
        fn selection_shrinks_as_theta_grows(
            words in proptest::collection::vec("[a-e]{1,3}", 1..6),
            names in proptest::collection::vec(proptest::collection::vec("[a-e]{1,3}", 1..4), 1..6),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let intents: Vec<Intent> = names
                .iter()
                .enumerate()
                .map(|(i, n)| Intent::new(&format!("i{i} {}", n.join(" ")), "", &[]))
                .collect();
            let q = rq(&words.join(" "));
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = classify_intents(&q, &intents, None, lo, &[]).selected;
            let b = classify_intents(&q, &intents, None, hi, &[]).selected;
            prop_assert!(b.is_subset(&a));
        }
    }
}
