//! Small synthetic databases with known structure, used by tests, examples and
//! the `toy` CLI command.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::rng;
use crate::schema::{ColumnKind, ColumnSpec, Database, DatabaseSchema, Row, Table, TableSchema, Value};

fn normal<R: Rng + ?Sized>(r: &mut R) -> f64 {
    r.sample(StandardNormal)
}

fn cat(s: &str) -> Value {
    Value::Category(s.to_string())
}

fn row(key: usize, foreign: Vec<usize>, attributes: Vec<Value>) -> Row {
    Row {
        key: key.to_string(),
        foreign: foreign.into_iter().map(|k| k.to_string()).collect(),
        attributes,
    }
}

pub fn household_person_schema() -> DatabaseSchema {
    DatabaseSchema::new(vec![
        TableSchema::new(
            "household",
            vec![
                ColumnSpec::primary_key("household_id"),
                ColumnSpec::attribute("income", ColumnKind::Numerical),
                ColumnSpec::attribute("region", ColumnKind::Categorical),
            ],
        ),
        TableSchema::new(
            "person",
            vec![
                ColumnSpec::primary_key("person_id"),
                ColumnSpec::foreign_key("household_id", "household"),
                ColumnSpec::attribute("age", ColumnKind::Numerical),
                ColumnSpec::attribute("employed", ColumnKind::Categorical),
            ],
        ),
    ])
    .expect("static schema is valid")
}

/// Households with persons; each household draws its size uniformly from `sizes`.
///
/// Person employment follows household income.
pub fn household_person(seed: u64, households: usize, sizes: &[usize]) -> Database {
    let mut r = rng::stream(seed, "toy/household");
    let mut hh = Vec::with_capacity(households);
    let mut people = Vec::new();
    for h in 0..households {
        let income = (50.0 + 15.0 * normal(&mut r)).round();
        let region = ["north", "south", "east", "west"][r.random_range(0..4)];
        hh.push(row(h + 1, vec![], vec![Value::Number(income), cat(region)]));
        let n = *sizes.choose(&mut r).unwrap_or(&0);
        for _ in 0..n {
            let age = (18.0 + 60.0 * r.random::<f64>()).round();
            let p_employed = 1.0 / (1.0 + (-(income - 50.0) / 8.0).exp());
            let employed = if r.random::<f64>() < p_employed { "yes" } else { "no" };
            people.push(row(
                people.len() + 1,
                vec![h + 1],
                vec![Value::Number(age), cat(employed)],
            ));
        }
    }
    Database::new(household_person_schema(), vec![Table { rows: hh }, Table { rows: people }])
        .expect("generated rows are consistent")
}

pub fn bank_schema() -> DatabaseSchema {
    DatabaseSchema::new(vec![
        TableSchema::new(
            "district",
            vec![
                ColumnSpec::primary_key("district_id"),
                ColumnSpec::attribute("wealth", ColumnKind::Numerical),
                ColumnSpec::attribute("urban", ColumnKind::Categorical),
            ],
        ),
        TableSchema::new(
            "account",
            vec![
                ColumnSpec::primary_key("account_id"),
                ColumnSpec::foreign_key("district_id", "district"),
                ColumnSpec::attribute("balance", ColumnKind::Numerical),
            ],
        ),
        TableSchema::new(
            "transaction",
            vec![
                ColumnSpec::primary_key("trans_id"),
                ColumnSpec::foreign_key("account_id", "account"),
                ColumnSpec::attribute("amount", ColumnKind::Numerical),
                ColumnSpec::attribute("kind", ColumnKind::Categorical),
            ],
        ),
    ])
    .expect("static schema is valid")
}

/// District ← account ← transaction chain.
///
/// Account balance tracks district wealth (one hop), and transaction amount and
/// kind track the account balance, which ties them to the district two hops away.
pub fn bank_chain(seed: u64, districts: usize, accounts_per_district: usize, transactions_per_account: usize) -> Database {
    let mut r = rng::stream(seed, "toy/bank");
    let mut d_rows = Vec::with_capacity(districts);
    let mut a_rows = Vec::new();
    let mut t_rows = Vec::new();
    for d in 0..districts {
        let wealth = normal(&mut r);
        let urban = if wealth + 0.5 * normal(&mut r) > 0.0 { "urban" } else { "rural" };
        d_rows.push(row(d + 1, vec![], vec![Value::Number(wealth), cat(urban)]));
        let n_acc = r.random_range(1..=2 * accounts_per_district - 1);
        for _ in 0..n_acc {
            let balance = wealth + 0.4 * normal(&mut r);
            a_rows.push(row(a_rows.len() + 1, vec![d + 1], vec![Value::Number(balance)]));
            let acc = a_rows.len();
            let n_tx = r.random_range(1..=2 * transactions_per_account - 1);
            for _ in 0..n_tx {
                let amount = balance + 0.4 * normal(&mut r);
                let kind = if balance + 0.5 * normal(&mut r) > 0.0 { "credit" } else { "debit" };
                t_rows.push(row(t_rows.len() + 1, vec![acc], vec![Value::Number(amount), cat(kind)]));
            }
        }
    }
    Database::new(
        bank_schema(),
        vec![Table { rows: d_rows }, Table { rows: a_rows }, Table { rows: t_rows }],
    )
    .expect("generated rows are consistent")
}

pub fn review_schema() -> DatabaseSchema {
    DatabaseSchema::new(vec![
        TableSchema::new(
            "user",
            vec![
                ColumnSpec::primary_key("user_id"),
                ColumnSpec::attribute("joined", ColumnKind::Datetime),
            ],
        ),
        TableSchema::new(
            "product",
            vec![
                ColumnSpec::primary_key("product_id"),
                ColumnSpec::attribute("price", ColumnKind::Numerical),
                ColumnSpec::attribute("category", ColumnKind::Categorical),
            ],
        ),
        TableSchema::new(
            "review",
            vec![
                ColumnSpec::primary_key("review_id"),
                ColumnSpec::foreign_key("user_id", "user"),
                ColumnSpec::foreign_key("product_id", "product"),
                ColumnSpec::attribute("stars", ColumnKind::Numerical),
            ],
        ),
    ])
    .expect("static schema is valid")
}

/// Reviews referencing both a user and a product.
pub fn reviews(seed: u64, users: usize, products: usize, reviews: usize) -> Database {
    let mut r = rng::stream(seed, "toy/reviews");
    let u_rows = (0..users)
        .map(|u| {
            let joined = 1.6e9 + (r.random_range(0..1000) as f64) * 86400.0;
            row(u + 1, vec![], vec![Value::Number(joined)])
        })
        .collect();
    let mut prices = Vec::with_capacity(products);
    let p_rows = (0..products)
        .map(|p| {
            let price = (20.0 * (1.0 + r.random::<f64>() * 4.0)).round();
            prices.push(price);
            let category = ["book", "toy", "tool"][r.random_range(0..3)];
            row(p + 1, vec![], vec![Value::Number(price), cat(category)])
        })
        .collect();
    let rv_rows = (0..reviews)
        .map(|i| {
            let u = r.random_range(0..users);
            let p = r.random_range(0..products);
            let stars = (5.0 - prices[p] / 40.0 + normal(&mut r) * 0.5).round().clamp(1.0, 5.0);
            row(i + 1, vec![u + 1, p + 1], vec![Value::Number(stars)])
        })
        .collect();
    Database::new(
        review_schema(),
        vec![Table { rows: u_rows }, Table { rows: p_rows }, Table { rows: rv_rows }],
    )
    .expect("generated rows are consistent")
}

/// Random schema of 2–4 tables and random rows, at most `max_rows` per table.
///
/// Keys are random distinct strings so that key relabeling is exercised.
pub fn random_database(seed: u64, max_rows: usize) -> Result<Database> {
    let mut r = rng::stream(seed, "toy/random");
    let n_tables = r.random_range(2..=4);
    let kinds = [ColumnKind::Numerical, ColumnKind::Categorical, ColumnKind::Datetime];
    let mut schemas = Vec::with_capacity(n_tables);
    let mut parents_of: Vec<Vec<usize>> = Vec::with_capacity(n_tables);
    let mut attr_kinds: Vec<Vec<ColumnKind>> = Vec::with_capacity(n_tables);
    for t in 0..n_tables {
        let mut cols = vec![ColumnSpec::primary_key("id")];
        if t > 0 {
            let n_fk = r.random_range(0..=2.min(t)).max(usize::from(t == 1));
            for f in 0..n_fk {
                let p = r.random_range(0..t);
                cols.push(ColumnSpec::foreign_key(&format!("fk{f}"), &format!("t{p}")));
            }
        }
        for a in 0..r.random_range(0..=3) {
            let kind = *kinds.choose(&mut r).unwrap();
            cols.push(ColumnSpec::attribute(&format!("a{a}"), kind));
        }
        // Shuffle column order to exercise header handling.
        cols.shuffle(&mut r);
        let ts = TableSchema::new(&format!("t{t}"), cols);
        attr_kinds.push(ts.attributes().map(|c| c.kind).collect());
        parents_of.push(
            ts.foreign_keys()
                .map(|c| c.target_table.as_deref().unwrap()[1..].parse().unwrap())
                .collect(),
        );
        schemas.push(ts);
    }
    let schema = DatabaseSchema::new(schemas)?;

    let mut keys: Vec<Vec<String>> = Vec::with_capacity(n_tables);
    let mut tables = Vec::with_capacity(n_tables);
    for t in 0..n_tables {
        let parents = &parents_of[t];
        let n = if parents.iter().any(|&p| keys[p].is_empty()) {
            0
        } else {
            r.random_range(if parents.is_empty() { 1 } else { 0 }..=max_rows)
        };
        let mut ids: Vec<u64> = Vec::with_capacity(n);
        while ids.len() < n {
            let k = r.random_range(0..1_000_000u64);
            if !ids.contains(&k) {
                ids.push(k);
            }
        }
        let own_keys: Vec<String> = ids.iter().map(|k| format!("{}-{k}", schema.table(t).name)).collect();
        let rows = own_keys
            .iter()
            .map(|key| {
                let foreign = parents.iter().map(|&p| keys[p].choose(&mut r).unwrap().clone()).collect();
                let attributes = attr_kinds[t]
                    .iter()
                    .map(|kind| match kind {
                        ColumnKind::Numerical => {
                            if r.random::<bool>() {
                                Value::Number(r.random_range(-50..50) as f64)
                            } else {
                                Value::Number(normal(&mut r) * 10.0)
                            }
                        }
                        ColumnKind::Categorical => cat(["a", "b", "c", "d", "e"].choose(&mut r).unwrap()),
                        ColumnKind::Datetime => Value::Number(1.5e9 + r.random_range(0..100_000) as f64 * 60.0),
                    })
                    .collect();
                Row {
                    key: key.clone(),
                    foreign,
                    attributes,
                }
            })
            .collect();
        keys.push(own_keys);
        tables.push(Table { rows });
    }
    Database::new(schema, tables)
}
