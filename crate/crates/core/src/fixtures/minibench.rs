//! A tiny BIRD-layout benchmark written to disk: two databases, questions
//! phrased as `Show me ...`, every difficulty label represented.

use std::fs;
use std::io;
use std::path::Path;

use rusqlite::Connection;
use serde_json::json;

use crate::provider::{task, Script, ScriptMode, ScriptRule};

pub struct MiniCase {
    pub db_id: &'static str,
    pub question: &'static str,
    pub gold_sql: &'static str,
    pub difficulty: &'static str,
    /// A valid query answering something else.
    pub wrong_sql: &'static str,
}

const SHOP_SEED: &str = "
CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT, city TEXT);
CREATE TABLE orders (id INTEGER PRIMARY KEY, customer_id INTEGER, amount REAL, status TEXT);
INSERT INTO customers VALUES (1,'Ada','Toronto'),(2,'Bo','Montreal'),(3,'Cy','Toronto'),(4,'Di','Calgary');
INSERT INTO orders VALUES (1,1,20.0,'shipped'),(2,1,35.5,'shipped'),(3,2,12.0,'cancelled'),
  (4,3,99.0,'shipped'),(5,4,5.0,'shipped'),(6,2,40.0,'shipped');
";

const LEAGUE_SEED: &str = "
CREATE TABLE teams (id INTEGER PRIMARY KEY, name TEXT, founded INTEGER);
CREATE TABLE games (id INTEGER PRIMARY KEY, home INTEGER, away INTEGER, home_goals INTEGER, away_goals INTEGER);
INSERT INTO teams VALUES (1,'Lynx',1990),(2,'Otters',1985),(3,'Hawks',2001);
INSERT INTO games VALUES (1,1,2,3,1),(2,2,3,0,0),(3,3,1,2,4),(4,2,1,1,2);
";

pub const MINI_CASES: [MiniCase; 8] = [
    MiniCase {
        db_id: "shop",
        question: "Show me the number of customers",
        gold_sql: "SELECT COUNT(*) FROM customers",
        difficulty: "simple",
        wrong_sql: "SELECT COUNT(*) FROM orders",
    },
    MiniCase {
        db_id: "shop",
        question: "Show me customer names in Toronto sorted by name",
        gold_sql: "SELECT name FROM customers WHERE city = 'Toronto' ORDER BY name",
        difficulty: "simple",
        wrong_sql: "SELECT name FROM customers ORDER BY name",
    },
    MiniCase {
        db_id: "shop",
        question: "Show me shipped revenue per city",
        gold_sql: "SELECT c.city, SUM(o.amount) FROM orders o JOIN customers c ON c.id = o.customer_id \
                   WHERE o.status = 'shipped' GROUP BY c.city",
        difficulty: "moderate",
        wrong_sql: "SELECT c.city, SUM(o.amount) FROM orders o JOIN customers c ON c.id = o.customer_id GROUP BY c.city",
    },
    MiniCase {
        db_id: "shop",
        question: "Show me customers whose shipped total beats the average order",
        gold_sql: "SELECT c.name FROM customers c JOIN orders o ON o.customer_id = c.id WHERE o.status = 'shipped' \
                   GROUP BY c.name HAVING SUM(o.amount) > (SELECT AVG(amount) FROM orders)",
        difficulty: "challenging",
        wrong_sql: "SELECT name FROM customers",
    },
    MiniCase {
        db_id: "league",
        question: "Show me every team founded before 2000",
        gold_sql: "SELECT name FROM teams WHERE founded < 2000",
        difficulty: "simple",
        wrong_sql: "SELECT name FROM teams",
    },
    MiniCase {
        db_id: "league",
        question: "Show me total home goals per team",
        gold_sql: "SELECT t.name, SUM(g.home_goals) FROM games g JOIN teams t ON t.id = g.home GROUP BY t.name",
        difficulty: "moderate",
        wrong_sql: "SELECT t.name, SUM(g.away_goals) FROM games g JOIN teams t ON t.id = g.home GROUP BY t.name",
    },
    MiniCase {
        db_id: "league",
        question: "Show me the number of drawn games",
        gold_sql: "SELECT COUNT(*) FROM games WHERE home_goals = away_goals",
        difficulty: "moderate",
        wrong_sql: "SELECT COUNT(*) FROM games",
    },
    MiniCase {
        db_id: "league",
        question: "Show me teams ranked by wins, most first",
        gold_sql: "WITH wins AS (SELECT CASE WHEN home_goals > away_goals THEN home ELSE away END AS team \
                   FROM games WHERE home_goals <> away_goals) \
                   SELECT t.name, COUNT(*) AS n FROM wins w JOIN teams t ON t.id = w.team GROUP BY t.name ORDER BY n DESC, t.name",
        difficulty: "challenging",
        wrong_sql: "SELECT name, 0 FROM teams ORDER BY name",
    },
];

fn write_db(path: &Path, seed: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    if path.exists() {
        fs::remove_file(path)?;
    }
    let conn = Connection::open(path).map_err(io::Error::other)?;
    conn.execute_batch(seed).map_err(io::Error::other)
}

/// Writes `questions.json` and `databases/<db>/<db>.sqlite` under `dir`.
pub fn write_mini_benchmark(dir: &Path) -> io::Result<()> {
    write_db(&dir.join("databases/shop/shop.sqlite"), SHOP_SEED)?;
    write_db(&dir.join("databases/league/league.sqlite"), LEAGUE_SEED)?;
    let questions: Vec<_> = MINI_CASES
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "question_id": i,
                "db_id": c.db_id,
                "question": c.question,
                "evidence": "",
                "SQL": c.gold_sql,
                "difficulty": c.difficulty,
            })
        })
        .collect();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("questions.json"), serde_json::to_string_pretty(&questions)?)
}

/// Script answering each question with its gold SQL, or with the wrong SQL
/// for the indices in `wrong`. Unmatched tasks get empty replies.
pub fn oracle_script(wrong: &[usize]) -> Script {
    let rules = MINI_CASES
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let sql = if wrong.contains(&i) { c.wrong_sql } else { c.gold_sql };
            ScriptRule::new(task::GENERATE_SQL, format!("```sql\n{sql}\n```"))
                .containing(format!("### QUERY\n{}\n", c.question))
        })
        .collect();
    Script { mode: ScriptMode::Fallback, rules }
}
