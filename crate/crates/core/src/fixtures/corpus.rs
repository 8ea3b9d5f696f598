//! Round-trip corpus: queries over the seeded `sports` and `retail`
//! databases covering joins, window functions, CASE aggregation, WITH
//! clauses, derived tables, set operations and correlated subqueries.

use super::FIN_PERF_SQL;

#[derive(Debug, Clone, Copy)]
pub struct CorpusQuery {
    pub id: &'static str,
    pub db_id: &'static str,
    pub sql: &'static str,
}

const fn q(id: &'static str, db_id: &'static str, sql: &'static str) -> CorpusQuery {
    CorpusQuery { id, db_id, sql }
}

const QUERIES: &[CorpusQuery] = &[
    q("s01", "sports", "SELECT ORG_NAME, REVENUE FROM SPORTS_FINANCIALS WHERE COUNTRY = 'Canada' AND FIN_MONTH = '2023-04-01'"),
    q("s02", "sports", "SELECT COUNTRY, SUM(REVENUE) AS TOTAL FROM SPORTS_FINANCIALS GROUP BY COUNTRY"),
    q("s03", "sports", "SELECT ORG_NAME, SUM(CASE WHEN FIN_MONTH < '2023-04-01' THEN REVENUE ELSE 0 END) AS Q1, SUM(CASE WHEN FIN_MONTH >= '2023-04-01' THEN REVENUE ELSE 0 END) AS Q2 FROM SPORTS_FINANCIALS GROUP BY ORG_NAME"),
    q("s04", "sports", "SELECT * FROM (SELECT ORG_NAME, SUM(VIEWS) AS V FROM SPORTS_VIEWERSHIP GROUP BY ORG_NAME) x WHERE x.V > 40000"),
    q("s05", "sports", "SELECT f.ORG_NAME, f.REVENUE, v.VIEWS FROM SPORTS_FINANCIALS f JOIN SPORTS_VIEWERSHIP v ON f.ORG_NAME = v.ORG_NAME AND f.FIN_MONTH = v.VIEW_MONTH WHERE f.FIN_MONTH = '2023-06-01'"),
    q("s06", "sports", "SELECT ORG_NAME, FIN_MONTH, REVENUE, ROW_NUMBER() OVER (PARTITION BY ORG_NAME ORDER BY REVENUE DESC, FIN_MONTH) AS RN FROM SPORTS_FINANCIALS"),
    q("s07", "sports", "SELECT ORG_NAME, TO_CHAR(FIN_MONTH, 'YYYY\"Q\"Q') AS QTR, SUM(REVENUE) AS REV FROM SPORTS_FINANCIALS GROUP BY ORG_NAME, TO_CHAR(FIN_MONTH, 'YYYY\"Q\"Q')"),
    q("s08", "sports", "WITH totals AS (SELECT ORG_NAME, SUM(REVENUE) AS REV FROM SPORTS_FINANCIALS GROUP BY ORG_NAME) SELECT ORG_NAME, REV FROM totals WHERE REV > 700000"),
    q("s09", "sports", "WITH fin AS (SELECT ORG_NAME, SUM(REVENUE) AS REV FROM SPORTS_FINANCIALS GROUP BY ORG_NAME), vw AS (SELECT ORG_NAME, SUM(VIEWS) AS V FROM SPORTS_VIEWERSHIP GROUP BY ORG_NAME) SELECT fin.ORG_NAME, CAST(fin.REV AS FLOAT) / NULLIF(vw.V, 0) AS RPV FROM fin JOIN vw ON fin.ORG_NAME = vw.ORG_NAME"),
    q("s10", "sports", "SELECT ORG_NAME, REV, RANK() OVER (ORDER BY REV DESC) AS R FROM (SELECT ORG_NAME, SUM(REVENUE) AS REV FROM SPORTS_FINANCIALS WHERE OWNERSHIP_FLAG_COLUMN = 'COC' GROUP BY ORG_NAME) t"),
    q("s11", "sports", "SELECT DISTINCT COUNTRY, OWNERSHIP_FLAG_COLUMN FROM SPORTS_FINANCIALS"),
    q("s12", "sports", "SELECT ORG_NAME, COUNT(*) AS N FROM SPORTS_VIEWERSHIP WHERE VIEWS > 6000 GROUP BY ORG_NAME HAVING COUNT(*) >= 3"),
    q("s13", "sports", "SELECT ORG_NAME, REVENUE FROM SPORTS_FINANCIALS WHERE FIN_MONTH = '2023-05-01' ORDER BY REVENUE DESC, ORG_NAME LIMIT 5"),
    q("s14", "sports", "SELECT a.ORG_NAME, a.Q2 - a.Q1 AS DELTA FROM (SELECT ORG_NAME, SUM(CASE WHEN FIN_MONTH < '2023-04-01' THEN REVENUE ELSE 0 END) AS Q1, SUM(CASE WHEN FIN_MONTH >= '2023-04-01' THEN REVENUE ELSE 0 END) AS Q2 FROM SPORTS_FINANCIALS GROUP BY ORG_NAME) a WHERE a.Q2 > a.Q1"),
    q("s15", "sports", "SELECT f.ORG_NAME, f.REV, v.V FROM (SELECT ORG_NAME, SUM(REVENUE) AS REV FROM SPORTS_FINANCIALS GROUP BY ORG_NAME) f JOIN (SELECT ORG_NAME, SUM(VIEWS) AS V FROM SPORTS_VIEWERSHIP GROUP BY ORG_NAME) v ON f.ORG_NAME = v.ORG_NAME"),
    q("s16", "sports", "SELECT ORG_NAME FROM SPORTS_FINANCIALS WHERE ORG_NAME IN (SELECT ORG_NAME FROM SPORTS_VIEWERSHIP WHERE VIEWS > 12000) GROUP BY ORG_NAME"),
    q("s17", "sports", "SELECT f.ORG_NAME, f.FIN_MONTH, f.REVENUE FROM SPORTS_FINANCIALS f WHERE f.REVENUE > (SELECT AVG(g.REVENUE) FROM SPORTS_FINANCIALS g WHERE g.ORG_NAME = f.ORG_NAME)"),
    q("s18", "sports", "SELECT ORG_NAME, FIN_MONTH, REVENUE - LAG(REVENUE) OVER (PARTITION BY ORG_NAME ORDER BY FIN_MONTH) AS MOM FROM SPORTS_FINANCIALS"),
    q("s19", "sports", "SELECT ORG_NAME, FIN_MONTH, SUM(REVENUE) OVER (PARTITION BY ORG_NAME ORDER BY FIN_MONTH ROWS BETWEEN UNBOUNDED PRECEDING AND CURRENT ROW) AS RUNNING FROM SPORTS_FINANCIALS"),
    q("s20", "sports", "SELECT ORG_NAME FROM SPORTS_FINANCIALS WHERE COUNTRY = 'USA' UNION SELECT ORG_NAME FROM SPORTS_VIEWERSHIP WHERE OWNERSHIP_FLAG_COLUMN = 'EXT'"),
    q("s21", "sports", "SELECT ranked.ORG_NAME, ranked.RN FROM (SELECT ORG_NAME, ROW_NUMBER() OVER (ORDER BY SUM(VIEWS) DESC, ORG_NAME) AS RN FROM SPORTS_VIEWERSHIP GROUP BY ORG_NAME) ranked WHERE ranked.RN <= 3"),
    q("s22", "sports", "SELECT COUNTRY, COUNT(DISTINCT ORG_NAME) AS ORGS, MAX(VIEWS) AS PEAK FROM SPORTS_VIEWERSHIP GROUP BY COUNTRY"),
    q("s23", "sports", "SELECT o.ORG_NAME, o.V FROM (SELECT i.ORG_NAME, i.V FROM (SELECT ORG_NAME, SUM(VIEWS) AS V FROM SPORTS_VIEWERSHIP GROUP BY ORG_NAME) i WHERE i.V > 30000) o WHERE o.ORG_NAME <> 'Denver Peaks'"),
    q("s24", "sports", "SELECT ORG_NAME, CASE WHEN SUM(REVENUE) > 800000 THEN 'large' WHEN SUM(REVENUE) > 700000 THEN 'medium' ELSE 'small' END AS BAND FROM SPORTS_FINANCIALS GROUP BY ORG_NAME"),
    q("s25", "sports", "SELECT f.ORG_NAME FROM SPORTS_FINANCIALS f WHERE EXISTS (SELECT 1 FROM SPORTS_VIEWERSHIP v WHERE v.ORG_NAME = f.ORG_NAME AND v.VIEWS > 13000) AND f.FIN_MONTH = '2023-01-01'"),
    q("s26", "sports", "SELECT ORG_NAME, (SELECT MAX(VIEWS) FROM SPORTS_VIEWERSHIP) AS GLOBAL_PEAK FROM SPORTS_FINANCIALS WHERE FIN_MONTH = '2023-02-01'"),
    q("s27", "sports", "WITH base AS (SELECT ORG_NAME, FIN_MONTH, REVENUE FROM SPORTS_FINANCIALS WHERE COUNTRY = 'Canada') SELECT b.ORG_NAME, m.MX FROM base b JOIN (SELECT ORG_NAME, MAX(REVENUE) AS MX FROM base GROUP BY ORG_NAME) m ON b.ORG_NAME = m.ORG_NAME AND b.REVENUE = m.MX"),
    q("s28", "sports", "SELECT ORG_NAME, NTILE(3) OVER (ORDER BY ORG_NAME) AS BUCKET FROM (SELECT DISTINCT ORG_NAME FROM SPORTS_FINANCIALS) d"),
    q("s29", "sports", "SELECT v.COUNTRY, AVG(v.VIEWS) AS AVG_VIEWS FROM SPORTS_VIEWERSHIP v LEFT JOIN SPORTS_FINANCIALS f ON f.ORG_NAME = v.ORG_NAME AND f.FIN_MONTH = v.VIEW_MONTH AND f.REVENUE > 150000 WHERE f.ORG_NAME IS NULL GROUP BY v.COUNTRY"),
    q("s30", "sports", "SELECT ORG_NAME, VIEW_MONTH, VIEWS FROM SPORTS_VIEWERSHIP WHERE VIEWS BETWEEN 7000 AND 9000 AND ORG_NAME LIKE '%a%'"),
    q("r01", "retail", "SELECT c.name, COUNT(o.id) AS orders FROM customers c LEFT JOIN orders o ON o.customer_id = c.id GROUP BY c.id, c.name"),
    q("r02", "retail", "SELECT p.category, SUM(oi.quantity * oi.unit_price) AS revenue FROM order_items oi JOIN products p ON p.id = oi.product_id GROUP BY p.category"),
    q("r03", "retail", "SELECT status, COUNT(*) AS n FROM orders GROUP BY status HAVING COUNT(*) > 10"),
    q("r04", "retail", "SELECT * FROM (SELECT customer_id, COUNT(*) AS n FROM orders WHERE status = 'shipped' GROUP BY customer_id) s WHERE s.n >= 2"),
    q("r05", "retail", "SELECT city, SUM(CASE WHEN segment = 'consumer' THEN 1 ELSE 0 END) AS consumers, SUM(CASE WHEN segment = 'corporate' THEN 1 ELSE 0 END) AS corporates FROM customers GROUP BY city"),
    q("r06", "retail", "SELECT o.id, o.order_date, SUM(oi.quantity) OVER (PARTITION BY o.customer_id ORDER BY o.order_date, o.id) AS cumulative_units FROM orders o JOIN order_items oi ON oi.order_id = o.id"),
    q("r07", "retail", "WITH spend AS (SELECT o.customer_id, SUM(oi.quantity * oi.unit_price) AS total FROM orders o JOIN order_items oi ON oi.order_id = o.id GROUP BY o.customer_id) SELECT c.name, s.total FROM customers c JOIN spend s ON s.customer_id = c.id WHERE s.total > 400"),
    q("r08", "retail", "SELECT name, price FROM products WHERE price > (SELECT AVG(price) FROM products)"),
    q("r09", "retail", "SELECT c.name FROM customers c WHERE NOT EXISTS (SELECT 1 FROM orders o WHERE o.customer_id = c.id)"),
    q("r10", "retail", "SELECT t.category, t.name, t.rk FROM (SELECT category, name, price, DENSE_RANK() OVER (PARTITION BY category ORDER BY price DESC) AS rk FROM products) t WHERE t.rk = 1"),
    q("r11", "retail", "SELECT substr(order_date, 1, 7) AS month, COUNT(*) AS orders FROM orders GROUP BY substr(order_date, 1, 7) ORDER BY month"),
    q("r12", "retail", "SELECT c.segment, AVG(x.total) AS avg_order FROM customers c JOIN (SELECT o.id, o.customer_id, SUM(oi.quantity * oi.unit_price) AS total FROM orders o JOIN order_items oi ON oi.order_id = o.id GROUP BY o.id, o.customer_id) x ON x.customer_id = c.id GROUP BY c.segment"),
    q("r13", "retail", "SELECT name FROM products WHERE category = 'books' UNION ALL SELECT name FROM products WHERE price < 20"),
    q("r14", "retail", "SELECT id, name, price, CASE WHEN price >= 60 THEN 'premium' WHEN price >= 30 THEN 'standard' ELSE 'budget' END AS tier FROM products ORDER BY price DESC, id"),
    q("r15", "retail", "WITH monthly AS (SELECT substr(order_date, 1, 7) AS month, COUNT(*) AS n FROM orders GROUP BY substr(order_date, 1, 7)), ranked AS (SELECT month, n, RANK() OVER (ORDER BY n DESC) AS r FROM monthly) SELECT month, n FROM ranked WHERE r <= 3"),
    q("r16", "retail", "SELECT p.name, COALESCE(SUM(oi.quantity), 0) AS units FROM products p LEFT JOIN order_items oi ON oi.product_id = p.id GROUP BY p.id, p.name"),
    q("r17", "retail", "SELECT o.status, COUNT(DISTINCT o.customer_id) AS customers FROM orders o WHERE o.order_date >= '2023-07-01' GROUP BY o.status"),
    q("r18", "retail", "SELECT big.customer_id FROM (SELECT customer_id, MAX(id) AS last_order FROM orders GROUP BY customer_id) big WHERE big.last_order > 60 ORDER BY big.customer_id LIMIT 10"),
    q("r19", "retail", "SELECT c.city, COUNT(*) AS n FROM orders o JOIN customers c ON c.id = o.customer_id WHERE o.status IN ('returned', 'cancelled') GROUP BY c.city"),
    q("r20", "retail", "SELECT order_id, product_id, quantity, SUM(quantity) OVER (PARTITION BY order_id) AS order_units, quantity * 1.0 / SUM(quantity) OVER (PARTITION BY order_id) AS share FROM order_items"),
];

/// The full corpus: the fin-perf query first, then the hand-written
/// queries.
pub fn round_trip_corpus() -> Vec<CorpusQuery> {
    let mut all = vec![q("fin_perf", "sports", FIN_PERF_SQL)];
    all.extend_from_slice(QUERIES);
    all
}
