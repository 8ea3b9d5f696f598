//! The fin-perf scenario: knowledge set, scripted provider and golden cases
//! for the running sports-holding example.

use std::sync::Arc;

use serde_json::json;

use super::{fin_perf_all_orgs, FIN_PERF_SQL};
use crate::clock::Clock;
use crate::editflow::GoldenCase;
use crate::exec::SqliteExecutor;
use crate::knowledge::{
    ingest_instructions, ingest_intents, ingest_query_log, ingest_schema, IntentSpec, KnowledgeStore, QueryLogEntry,
    ROOT_VERSION,
};
use crate::provider::{task, ScriptRule, ScriptedProvider};
use crate::sqlkit::Dialect;

pub const FIN_PERF_QUERY: &str =
    "Identify our 5 sports organisations with the best and worst QoQFP in Canada for Q2 2023.";

pub const MULTIPLIER_INSTRUCTION: &str =
    "Apply a -1 multiplier when calculating the change in performance metrics.";

pub const CONDITIONAL_AGG_INSTRUCTION: &str =
    "Use conditional aggregations when comparing revenue data across periods.";

pub const OWNERSHIP_FEEDBACK: &str =
    "This response queries all sports organizations but I only care about our organizations.";

pub const OWNERSHIP_INSTRUCTION: &str =
    "Our organizations are the ones with OWNERSHIP_FLAG_COLUMN = 'COC'; filter financial and viewership data on it.";

pub const OWNERSHIP_PREDICATE: &str = "OWNERSHIP_FLAG_COLUMN = 'COC'";

pub const PLAN_FIRST_STEP: &str = "Begin by looking at the financial data from the SPORTS_FINANCIALS table.";

/// Question of the golden case that depends on the multiplier instruction.
pub const REVENUE_CHANGE_QUERY: &str = "Show me the change in revenue of Canadian organisations from Q1 to Q2 2023.";

const HANDBOOK: &str = "Finance handbook for analysts. Apply a -1 multiplier when calculating the change in \
performance metrics. Use conditional aggregations when comparing revenue data across periods.";

const FIN_WHERE_PREFIX: &str = "...WHERE TO_CHAR(FIN_MONTH";
const VIEW_WHERE_PREFIX: &str = "...WHERE TO_CHAR(VIEW_MONTH";

/// A built fin-perf knowledge store and the ids the scenario refers to.
pub struct FinPerf {
    pub store: Arc<KnowledgeStore>,
    pub version: String,
    pub financials_where_id: String,
    pub viewership_where_id: String,
    pub multiplier_id: String,
}

/// Intents, the all-organisations query log entry, the handbook
/// instructions and the sports schema, one version each.
pub fn fin_perf_store(clock: Arc<dyn Clock>, executor: &SqliteExecutor) -> FinPerf {
    let store = Arc::new(KnowledgeStore::in_memory(clock));
    let intents = [
        ("financial performance", "revenue, profit and their change over time"),
        ("TV viewership numbers", "audience and views of broadcast games"),
    ]
    .map(|(name, description)| IntentSpec {
        name: name.into(),
        description: description.into(),
        keywords: Vec::new(),
    });
    let v = ingest_intents(&store, &intents, ROOT_VERSION, "fixture").expect("intents ingest");
    let entry = QueryLogEntry {
        id: Some("fin_perf".into()),
        nl_text: "Show me our 5 sports organisations with the best and worst QoQFP in Canada for Q2 2023.".into(),
        sql: fin_perf_all_orgs(),
        intents: vec!["financial performance".into(), "TV viewership numbers".into()],
        db_id: Some("sports".into()),
    };
    let v = ingest_query_log(&store, &[entry], &v, "fixture", Dialect::Sqlite).expect("query log ingest").version_id;
    let extraction = json!({"instructions": [
        {"text": MULTIPLIER_INSTRUCTION, "intents": ["financial performance"]},
        {"text": CONDITIONAL_AGG_INSTRUCTION, "intents": ["financial performance"]},
    ]});
    let extractor = ScriptedProvider::strict(vec![ScriptRule::new(task::EXTRACT_INSTRUCTIONS, extraction.to_string())]);
    let v = ingest_instructions(&store, &[("handbook".into(), HANDBOOK.into())], &v, &extractor, "fixture")
        .expect("instruction ingest")
        .version_id;
    let v = ingest_schema(&store, executor, "sports", &v, "fixture").expect("schema ingest").version_id;
    let records = &store.version(&v).expect("fixture version").records;
    let example = |prefix: &str| {
        records
            .examples
            .iter()
            .find(|e| e.substatement.text.starts_with(prefix) && e.substatement.text.contains("COUNTRY = 'Canada'"))
            .map(|e| e.id.clone())
            .expect("fixture where clause")
    };
    let financials_where_id = example(FIN_WHERE_PREFIX);
    let viewership_where_id = example(VIEW_WHERE_PREFIX);
    let multiplier_id = records
        .instructions
        .iter()
        .find(|i| i.text == MULTIPLIER_INSTRUCTION)
        .map(|i| i.id.clone())
        .expect("multiplier instruction");
    FinPerf { store, version: v, financials_where_id, viewership_where_id, multiplier_id }
}

/// The 24-step plan: the first step reads SPORTS_FINANCIALS.
pub fn fin_perf_plan() -> serde_json::Value {
    let mut steps = vec![json!({"description": PLAN_FIRST_STEP, "pseudo_sql": "...FROM SPORTS_FINANCIALS..."})];
    let rest = [
        ("Restrict the financial rows to Canadian organisations.", "...WHERE COUNTRY = 'Canada'..."),
        ("Keep only months of the first two quarters of 2023.", "...TO_CHAR(FIN_MONTH, 'YYYY\"Q\"Q') IN ('2023Q1', '2023Q2')..."),
        ("Sum revenue of Q1 2023 with a conditional aggregation.", "...SUM(CASE WHEN TO_CHAR(FIN_MONTH, 'YYYY\"Q\"Q') = '2023Q1' THEN REVENUE ELSE 0 END) AS REVENUE_2023Q1..."),
        ("Sum revenue of Q2 2023 the same way.", "...SUM(CASE WHEN TO_CHAR(FIN_MONTH, 'YYYY\"Q\"Q') = '2023Q2' THEN REVENUE ELSE 0 END) AS REVENUE_2023Q2..."),
        ("Group the financial rows by organisation and country.", "...GROUP BY ORG_NAME, COUNTRY..."),
        ("Name this intermediate result FINANCIALS.", "...FINANCIALS AS (..."),
        ("Look at the viewership data from the SPORTS_VIEWERSHIP table.", "...FROM SPORTS_VIEWERSHIP..."),
        ("Restrict the viewership rows to Canadian organisations.", "...WHERE COUNTRY = 'Canada'..."),
        ("Keep only viewership months of the first two quarters of 2023.", "...TO_CHAR(VIEW_MONTH, 'YYYY\"Q\"Q') IN ('2023Q1', '2023Q2')..."),
        ("Sum views of Q1 2023.", "...SUM(CASE WHEN TO_CHAR(VIEW_MONTH, 'YYYY\"Q\"Q') = '2023Q1' THEN VIEWS ELSE 0 END) AS VIEWS_2023Q1..."),
        ("Sum views of Q2 2023.", "...SUM(CASE WHEN TO_CHAR(VIEW_MONTH, 'YYYY\"Q\"Q') = '2023Q2' THEN VIEWS ELSE 0 END) AS VIEWS_2023Q2..."),
        ("Group the viewership rows by organisation.", "...GROUP BY ORG_NAME..."),
        ("Name this intermediate result VIEWERSHIP.", "...VIEWERSHIP AS (..."),
        ("Join financials and viewership on the organisation name.", "...FROM FINANCIALS f JOIN VIEWERSHIP v ON f.ORG_NAME = v.ORG_NAME..."),
        ("Compute revenue per view for Q2.", "...CAST(f.REVENUE_2023Q2 AS FLOAT) / NULLIF(v.VIEWS_2023Q2, 0) AS RPV..."),
        ("Compute revenue per view for Q1.", "...CAST(f.REVENUE_2023Q1 AS FLOAT) / NULLIF(v.VIEWS_2023Q1, 0) AS PRIOR_QTR_RPV..."),
        ("Apply the -1 multiplier to the change in revenue per view.", "...-1 * (RPV - PRIOR_QTR_RPV) AS RPV_CHANGE..."),
        ("Compute the impact of the change weighted by Q2 views.", "...(RPV - PRIOR_QTR_RPV) * NULLIF(v.VIEWS_2023Q2, 0) AS IMPACT..."),
        ("Rank organisations from best to worst change.", "...ROW_NUMBER() OVER (PARTITION BY f.COUNTRY ORDER BY RPV_CHANGE DESC) AS SPORT_RANK..."),
        ("Rank organisations from worst to best change.", "...ROW_NUMBER() OVER (PARTITION BY f.COUNTRY ORDER BY RPV_CHANGE ASC) AS WORST_SPORT_RANK..."),
        ("Name the ranked result CHANGE_IN_REVENUE.", "...CHANGE_IN_REVENUE AS (..."),
        ("Keep the five best and five worst organisations.", "...WHERE SPORT_RANK <= 5 OR WORST_SPORT_RANK <= 5..."),
        ("Return rank, organisation and the metrics ordered by rank.", "...ORDER BY SPORT_RANK..."),
    ];
    steps.extend(rest.iter().map(|(d, p)| json!({"description": d, "pseudo_sql": p})));
    json!({ "steps": steps })
}

/// Rules key on the query section: example descriptions repeat the
/// fin-perf question in every prompt.
const FIN_PERF_MARK: &str = "### QUERY\nShow me our 5 sports organisations";
const REVENUE_CHANGE_MARK: &str = "### QUERY\nShow me the change in revenue";

fn fenced(sql: &str) -> String {
    format!("```sql\n{}\n```", sql.trim())
}

/// Approved SQL of the revenue-change golden case.
pub const REVENUE_CHANGE_SQL: &str = "SELECT ORG_NAME, -1 * (SUM(CASE WHEN FIN_MONTH >= '2023-04-01' THEN REVENUE ELSE 0 END) \
- SUM(CASE WHEN FIN_MONTH < '2023-04-01' THEN REVENUE ELSE 0 END)) AS REVENUE_CHANGE \
FROM SPORTS_FINANCIALS WHERE COUNTRY = 'Canada' GROUP BY ORG_NAME";

/// The same query without the multiplier.
const REVENUE_CHANGE_UNSIGNED_SQL: &str = "SELECT ORG_NAME, SUM(CASE WHEN FIN_MONTH >= '2023-04-01' THEN REVENUE ELSE 0 END) \
- SUM(CASE WHEN FIN_MONTH < '2023-04-01' THEN REVENUE ELSE 0 END) AS REVENUE_CHANGE \
FROM SPORTS_FINANCIALS WHERE COUNTRY = 'Canada' GROUP BY ORG_NAME";

/// Rules for the generation pipeline. The fin-perf SQL carries the
/// ownership predicate only when the prompt does; the revenue-change SQL
/// carries the multiplier only when the instruction is in the prompt.
pub fn generation_rules() -> Vec<ScriptRule> {
    vec![
        ScriptRule::new(task::REFORMULATE, "Show me our 5 sports organisations with the best and worst QoQFP in Canada for Q2 2023.")
            .containing("QUESTION: Identify our 5"),
        ScriptRule::new(task::CLASSIFY_INTENTS, r#"["financial performance", "TV viewership numbers"]"#),
        ScriptRule::new(task::LINK_SCHEMA, "SPORTS_FINANCIALS\nSPORTS_VIEWERSHIP"),
        ScriptRule::new(task::PLAN, fin_perf_plan().to_string()).containing(FIN_PERF_MARK),
        ScriptRule::new(
            task::PLAN,
            json!({"steps": [
                {"description": "Read revenue of Canadian organisations from SPORTS_FINANCIALS.", "pseudo_sql": "...FROM SPORTS_FINANCIALS..."},
                {"description": "Subtract Q1 revenue from Q2 revenue per organisation.", "pseudo_sql": "...GROUP BY ORG_NAME..."}
            ]})
            .to_string(),
        ),
        ScriptRule::new(task::GENERATE_SQL, fenced(FIN_PERF_SQL)).containing(FIN_PERF_MARK).containing(OWNERSHIP_PREDICATE),
        ScriptRule::new(task::GENERATE_SQL, fenced(&fin_perf_all_orgs())).containing(FIN_PERF_MARK),
        ScriptRule::new(task::GENERATE_SQL, fenced(REVENUE_CHANGE_SQL))
            .containing(REVENUE_CHANGE_MARK)
            .containing(MULTIPLIER_INSTRUCTION),
        ScriptRule::new(task::GENERATE_SQL, fenced(REVENUE_CHANGE_UNSIGNED_SQL)).containing(REVENUE_CHANGE_MARK),
        ScriptRule::new(task::SUMMARIZE, "Ranks Canadian organisations by the change in revenue per view."),
    ]
}

/// Rules for the ownership feedback: two example updates and one
/// instruction insert.
pub fn feedback_rules(fp: &FinPerf) -> Vec<ScriptRule> {
    let fin = &fp.financials_where_id;
    let view = &fp.viewership_where_id;
    let targets = json!([
        {"ref": format!("example:{fin}"), "explanation": "filters financial rows by country only"},
        {"ref": format!("example:{view}"), "explanation": "filters viewership rows by country only"},
    ]);
    let plan = json!({"steps": [
        {"description": "Add the ownership predicate to the financial filter example."},
        {"description": "Add the ownership predicate to the viewership filter example."},
        {"description": "Record that our organizations are those with the COC ownership flag."},
    ]});
    let edits = json!({"edits": [
        {"kind": "update", "target_kind": "example", "target_id": fin,
         "rationale": "only organisations the company owns",
         "after": {"sql": "...WHERE TO_CHAR(FIN_MONTH, 'YYYY\"Q\"Q') IN ('2023Q1', '2023Q2') AND COUNTRY = 'Canada' AND OWNERSHIP_FLAG_COLUMN = 'COC'...",
                   "nl_description": "filters rows of SPORTS_FINANCIALS to our Canadian organisations in Q1 and Q2 2023"}},
        {"kind": "update", "target_kind": "example", "target_id": view,
         "rationale": "only organisations the company owns",
         "after": {"sql": "...WHERE TO_CHAR(VIEW_MONTH, 'YYYY\"Q\"Q') IN ('2023Q1', '2023Q2') AND COUNTRY = 'Canada' AND OWNERSHIP_FLAG_COLUMN = 'COC'...",
                   "nl_description": "filters rows of SPORTS_VIEWERSHIP to our Canadian organisations in Q1 and Q2 2023"}},
        {"kind": "insert", "target_kind": "instruction",
         "rationale": "define our organizations",
         "after": {"text": OWNERSHIP_INSTRUCTION, "sql_fragment": OWNERSHIP_PREDICATE,
                   "intents": ["financial performance", "TV viewership numbers"]}},
    ]});
    vec![
        ScriptRule::new(task::FEEDBACK_TARGETS, targets.to_string()),
        ScriptRule::new(task::FEEDBACK_EXPAND, "The financial filter keeps every organisation in Canada; it must also require OWNERSHIP_FLAG_COLUMN = 'COC'.")
            .containing(fin.as_str()),
        ScriptRule::new(task::FEEDBACK_EXPAND, "The viewership filter keeps every organisation in Canada; it must also require OWNERSHIP_FLAG_COLUMN = 'COC'.")
            .containing(view.as_str()),
        ScriptRule::new(task::EDIT_PLAN, plan.to_string()),
        ScriptRule::new(task::EDIT_GENERATE, edits.to_string()),
    ]
}

/// Generation and feedback rules in fallback mode.
pub fn fin_perf_provider(fp: &FinPerf) -> ScriptedProvider {
    let mut rules = generation_rules();
    rules.extend(feedback_rules(fp));
    ScriptedProvider::fallback(rules)
}

/// The fin-perf question with the ownership-filtered answer, and the
/// revenue-change question that needs the multiplier instruction.
pub fn golden_cases() -> Vec<GoldenCase> {
    vec![
        GoldenCase {
            id: "g_fin_perf".into(),
            nl_query: FIN_PERF_QUERY.into(),
            approved_sql: FIN_PERF_SQL.into(),
            db_id: "sports".into(),
            last_ex: false,
        },
        GoldenCase {
            id: "g_revenue_change".into(),
            nl_query: REVENUE_CHANGE_QUERY.into(),
            approved_sql: REVENUE_CHANGE_SQL.into(),
            db_id: "sports".into(),
            last_ex: false,
        },
    ]
}
