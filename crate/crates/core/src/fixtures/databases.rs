//! Deterministically seeded SQLite databases used by tests, the demo CLI and
//! the round-trip corpus.

/// Sports organisations: (name, country, ownership flag).
pub const SPORTS_ORGS: &[(&str, &str, &str)] = &[
    ("Maple Hawks", "Canada", "COC"),
    ("Toronto Comets", "Canada", "COC"),
    ("Vancouver Orcas", "Canada", "COC"),
    ("Calgary Rams", "Canada", "COC"),
    ("Ottawa Lynx", "Canada", "COC"),
    ("Montreal Voyageurs", "Canada", "COC"),
    ("Halifax Tides", "Canada", "COC"),
    ("Winnipeg Bisons", "Canada", "EXT"),
    ("Edmonton Drillers", "Canada", "EXT"),
    ("Quebec Harfangs", "Canada", "EXT"),
    ("Boston Harriers", "USA", "COC"),
    ("Denver Peaks", "USA", "COC"),
    ("Austin Armadillos", "USA", "EXT"),
];

fn quote(text: &str) -> String {
    format!("'{}'", text.replace('\'', "''"))
}

/// Seed script for the `sports` database (monthly revenue and viewership for
/// the first half of 2023).
pub fn sports_seed_sql() -> String {
    let mut sql = String::from(
        "CREATE TABLE SPORTS_FINANCIALS (ORG_NAME TEXT NOT NULL, COUNTRY TEXT NOT NULL, \
         OWNERSHIP_FLAG_COLUMN TEXT NOT NULL, FIN_MONTH TEXT NOT NULL, REVENUE INTEGER NOT NULL);\n\
         CREATE TABLE SPORTS_VIEWERSHIP (ORG_NAME TEXT NOT NULL, COUNTRY TEXT NOT NULL, \
         OWNERSHIP_FLAG_COLUMN TEXT NOT NULL, VIEW_MONTH TEXT NOT NULL, VIEWS INTEGER NOT NULL);\n",
    );
    for (i, (name, country, flag)) in SPORTS_ORGS.iter().enumerate() {
        let i = i as i64;
        for month in 1..=6i64 {
            let revenue = 100_000
                + i * 13_579
                + ((i * 7 + month * 11) % 17) * 1_000
                + if month >= 4 { (i * i * 37) % 4_100 } else { 0 };
            let views = 5_000 + i * 731 + ((i * 5 + month * 3) % 13) * 97 + month * (i % 4) * 41;
            let date = format!("2023-{month:02}-01");
            sql.push_str(&format!(
                "INSERT INTO SPORTS_FINANCIALS VALUES ({}, {}, {}, {}, {revenue});\n",
                quote(name),
                quote(country),
                quote(flag),
                quote(&date)
            ));
            sql.push_str(&format!(
                "INSERT INTO SPORTS_VIEWERSHIP VALUES ({}, {}, {}, {}, {views});\n",
                quote(name),
                quote(country),
                quote(flag),
                quote(&date)
            ));
        }
    }
    sql
}

/// Small linear congruential generator; fixture data must not depend on an
/// external RNG's version.
struct Lcg(u64);

impl Lcg {
    fn next(&mut self, bound: u64) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6_364_136_223_846_793_005)
            .wrapping_add(1_442_695_040_888_963_407);
        (self.0 >> 33) % bound
    }
}

const CITIES: &[&str] = &["Lyon", "Porto", "Oslo", "Quito", "Perth", "Cork"];
const SEGMENTS: &[&str] = &["consumer", "corporate", "home_office"];
const CATEGORIES: &[&str] = &["books", "games", "garden", "kitchen"];
const STATUSES: &[&str] = &["shipped", "pending", "cancelled", "returned"];

/// Seed script for the `retail` database.
pub fn retail_seed_sql() -> String {
    let mut rng = Lcg(0x5eed_2023);
    let mut sql = String::from(
        "CREATE TABLE customers (id INTEGER PRIMARY KEY, name TEXT NOT NULL, city TEXT NOT NULL, segment TEXT NOT NULL);\n\
         CREATE TABLE products (id INTEGER PRIMARY KEY, name TEXT NOT NULL, category TEXT NOT NULL, price INTEGER NOT NULL);\n\
         CREATE TABLE orders (id INTEGER PRIMARY KEY, customer_id INTEGER NOT NULL, order_date TEXT NOT NULL, status TEXT NOT NULL);\n\
         CREATE TABLE order_items (order_id INTEGER NOT NULL, product_id INTEGER NOT NULL, quantity INTEGER NOT NULL, unit_price INTEGER NOT NULL);\n",
    );
    for id in 1..=30u64 {
        let city = CITIES[rng.next(CITIES.len() as u64) as usize];
        let segment = SEGMENTS[rng.next(SEGMENTS.len() as u64) as usize];
        sql.push_str(&format!(
            "INSERT INTO customers VALUES ({id}, 'customer_{id:02}', '{city}', '{segment}');\n"
        ));
    }
    let mut prices = Vec::new();
    for id in 1..=12u64 {
        let category = CATEGORIES[((id - 1) % CATEGORIES.len() as u64) as usize];
        let price = 5 + rng.next(95);
        prices.push(price);
        sql.push_str(&format!(
            "INSERT INTO products VALUES ({id}, 'product_{id:02}', '{category}', {price});\n"
        ));
    }
    for id in 1..=80u64 {
        let customer = 1 + rng.next(28);
        let month = 1 + rng.next(12);
        let day = 1 + rng.next(28);
        let status = STATUSES[rng.next(STATUSES.len() as u64) as usize];
        sql.push_str(&format!(
            "INSERT INTO orders VALUES ({id}, {customer}, '2023-{month:02}-{day:02}', '{status}');\n"
        ));
        let lines = 1 + rng.next(4);
        for _ in 0..lines {
            let product = 1 + rng.next(12);
            let quantity = 1 + rng.next(5);
            let unit_price = prices[(product - 1) as usize];
            sql.push_str(&format!(
                "INSERT INTO order_items VALUES ({id}, {product}, {quantity}, {unit_price});\n"
            ));
        }
    }
    sql
}
