use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

use genedit_core::fixtures::minibench::{oracle_script, write_mini_benchmark};
use genedit_core::fixtures::FIN_PERF_SQL;
use genedit_core::provider::{task, Script, ScriptMode, ScriptRule};

fn genedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genedit")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_script(path: &Path, script: &Script) {
    std::fs::write(path, serde_json::to_string(script).unwrap()).unwrap();
}

#[test]
fn sqlkit_decomposes_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sqlkit"))
        .args(["decompose", "-", "--source-id", "fp"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(FIN_PERF_SQL.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["substatements"].as_array().unwrap().len() > 10);
    assert!(v["recomposed"].as_str().unwrap().contains("SPORTS_FINANCIALS"));
    assert!(v["recompose_error"].is_null());

    let bad = Command::new(env!("CARGO_BIN_EXE_sqlkit")).args(["decompose", "/no/such/file.sql"]).output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn eval_prints_the_ablation_table() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    write_mini_benchmark(&bench).unwrap();
    let script = dir.path().join("oracle.json");
    write_script(&script, &oracle_script(&[]));
    let args = ["eval", "--benchmark", bench.to_str().unwrap(), "--fraction", "1", "--seed", "3"];
    let out = genedit(&[&args[..], &["--provider-script", script.to_str().unwrap(), "--ablate", "examples"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    let header = table.lines().next().unwrap();
    for col in ["Sim.", "Mod.", "Chall.", "Total"] {
        assert!(header.contains(col), "{header}");
    }
    assert!(table.contains("100.00"));
    assert!(table.contains("w/o Examples"));

    let json_out = genedit(&[&args[..], &["--provider-script", script.to_str().unwrap(), "--json"]].concat());
    let report: Value = serde_json::from_slice(&json_out.stdout).unwrap();
    assert_eq!(report["sampled"], 8);
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);

    let bad = genedit(&[&args[..4], &["--fraction", "0", "--seed", "1", "--provider-script", script.to_str().unwrap()]].concat());
    assert_eq!(bad.status.code(), Some(2));
}

fn config_dir(golden: Value, script: &Script) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("knowledge")).unwrap();
    std::fs::write(dir.path().join("golden.json"), golden.to_string()).unwrap();
    write_script(&dir.path().join("script.json"), script);
    let config = r#"
knowledge_dir = "knowledge"
golden_file = "golden.json"
default_db = "sports"

[provider]
kind = "scripted"
script = "script.json"

[databases]
sports = "fixture:sports"
"#;
    std::fs::write(dir.path().join("genedit.toml"), config).unwrap();
    dir
}

fn answer(sql: &str) -> Script {
    Script { mode: ScriptMode::Fallback, rules: vec![ScriptRule::new(task::GENERATE_SQL, format!("```sql\n{sql}\n```"))] }
}

const COUNT_SQL: &str = "SELECT COUNT(*) FROM SPORTS_FINANCIALS";

#[test]
fn ingest_checkpoint_and_regression() {
    let golden = json!([{ "id": "g1", "nl_query": "Show me how many financial rows exist", "approved_sql": COUNT_SQL, "db_id": "sports", "last_ex": true }]);
    let dir = config_dir(golden, &answer(COUNT_SQL));
    let config = dir.path().join("genedit.toml");
    let config = config.to_str().unwrap();

    let ingest = genedit(&["--config", config, "ingest", "schema", "sports"]);
    assert!(ingest.status.success(), "{}", String::from_utf8_lossy(&ingest.stderr));
    let report: Value = serde_json::from_slice(&ingest.stdout).unwrap();
    let version = report["version_id"].as_str().unwrap().to_string();

    let list: Value = serde_json::from_slice(&genedit(&["--config", config, "checkpoint", "list"]).stdout).unwrap();
    assert_eq!(list["head"], version.as_str());
    assert_eq!(list["versions"].as_array().unwrap().len(), 2);

    let generated = genedit(&["--config", config, "generate", "Show me how many financial rows exist"]);
    assert!(generated.status.success());
    let trace: Value = serde_json::from_slice(&generated.stdout).unwrap();
    assert_eq!(trace["final_sql"], COUNT_SQL);

    let passing = genedit(&["--config", config, "regression", "run"]);
    assert_eq!(passing.status.code(), Some(0), "{}", String::from_utf8_lossy(&passing.stderr));
    let wrong = dir.path().join("wrong.json");
    write_script(&wrong, &answer("SELECT 0"));
    let failing = genedit(&["--config", config, "--provider-script", wrong.to_str().unwrap(), "regression", "run"]);
    assert_eq!(failing.status.code(), Some(1));

    let revert = genedit(&["--config", config, "checkpoint", "revert", "v0000"]);
    assert!(revert.status.success());
    let list: Value = serde_json::from_slice(&genedit(&["--config", config, "checkpoint", "list"]).stdout).unwrap();
    assert_eq!(list["versions"].as_array().unwrap().len(), 3);
    assert_eq!(list["versions"][0]["version_id"], list["head"]);

    let missing = genedit(&["--config", dir.path().join("nope.toml").to_str().unwrap(), "checkpoint", "list"]);
    assert_eq!(missing.status.code(), Some(2));
}
