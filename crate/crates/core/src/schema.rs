//! Relational data model: schema descriptors, in-memory tables and CSV ingestion.
//!
//! A schema is a JSON document listing tables and their columns. Every table has
//! exactly one primary key; foreign-key columns name the table they reference and
//! induce the link set `(child, fk_column, parent)` of the database.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numerical,
    Categorical,
    Datetime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    PrimaryKey,
    ForeignKey,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_table: Option<String>,
}

impl ColumnSpec {
    pub fn primary_key(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Numerical,
            role: ColumnRole::PrimaryKey,
            target_table: None,
        }
    }

    pub fn foreign_key(name: &str, target: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Numerical,
            role: ColumnRole::ForeignKey,
            target_table: Some(target.to_string()),
        }
    }

    pub fn attribute(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            role: ColumnRole::Attribute,
            target_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
}

impl TableSchema {
    pub fn new(name: &str, columns: Vec<ColumnSpec>) -> Self {
        Self {
            name: name.to_string(),
            columns,
        }
    }

    pub fn primary_key(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.role == ColumnRole::PrimaryKey)
            .expect("validated table has a primary key")
    }

    pub fn foreign_keys(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::ForeignKey)
    }

    pub fn attributes(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.role == ColumnRole::Attribute)
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes().count()
    }
}

/// One primary/foreign key reference relation between two tables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Link {
    pub child: usize,
    /// Position of the foreign key among the child's foreign-key columns.
    pub fk_index: usize,
    pub fk_column: String,
    pub parent: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabaseSchema {
    tables: Vec<TableSchema>,
    links: Vec<Link>,
}

#[derive(Serialize, Deserialize)]
struct SchemaDocument {
    tables: Vec<TableSchema>,
}

impl Serialize for DatabaseSchema {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SchemaDocument {
            tables: self.tables.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DatabaseSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = SchemaDocument::deserialize(d)?;
        DatabaseSchema::new(doc.tables).map_err(serde::de::Error::custom)
    }
}

impl DatabaseSchema {
    /// Validates the table list and derives the link set from foreign-key columns.
    pub fn new(tables: Vec<TableSchema>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, t) in tables.iter().enumerate() {
            if t.name.is_empty() {
                return Err(Error::validation("", "table name must be nonempty"));
            }
            if index.insert(t.name.clone(), i).is_some() {
                return Err(Error::validation(&t.name, "duplicate table name"));
            }
        }

        let mut links = Vec::new();
        for (i, t) in tables.iter().enumerate() {
            let mut seen = HashSet::new();
            let mut pk_count = 0;
            for c in &t.columns {
                if c.name.is_empty() {
                    return Err(Error::validation(&t.name, "column name must be nonempty"));
                }
                if !seen.insert(c.name.as_str()) {
                    return Err(Error::validation(
                        &t.name,
                        format!("duplicate column `{}`", c.name),
                    ));
                }
                match c.role {
                    ColumnRole::PrimaryKey => pk_count += 1,
                    ColumnRole::ForeignKey => {
                        let Some(target) = &c.target_table else {
                            return Err(Error::validation(
                                &t.name,
                                format!("foreign key `{}` has no target_table", c.name),
                            ));
                        };
                        if target == &t.name {
                            return Err(Error::validation(
                                &t.name,
                                format!(
                                    "foreign key `{}` references its own table: self-referential schemas unsupported",
                                    c.name
                                ),
                            ));
                        }
                        if !index.contains_key(target) {
                            return Err(Error::validation(
                                &t.name,
                                format!(
                                    "foreign key `{}` references unknown table `{target}`",
                                    c.name
                                ),
                            ));
                        }
                    }
                    ColumnRole::Attribute => {}
                }
                if c.role != ColumnRole::ForeignKey && c.target_table.is_some() {
                    return Err(Error::validation(
                        &t.name,
                        format!("column `{}` is not a foreign key but has target_table", c.name),
                    ));
                }
            }
            match pk_count {
                0 => return Err(Error::validation(&t.name, "table has no primary key")),
                1 => {}
                _ => {
                    return Err(Error::validation(
                        &t.name,
                        "composite primary keys unsupported",
                    ))
                }
            }
            for (fk_index, c) in t.foreign_keys().enumerate() {
                links.push(Link {
                    child: i,
                    fk_index,
                    fk_column: c.name.clone(),
                    parent: index[c.target_table.as_ref().unwrap()],
                });
            }
        }

        Ok(Self { tables, links })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: SchemaDocument = serde_json::from_str(text).map_err(|e| Error::SchemaParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::new(doc.tables)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn tables(&self) -> &[TableSchema] {
        &self.tables
    }

    pub fn table(&self, index: usize) -> &TableSchema {
        &self.tables[index]
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Links whose child is `table`, in foreign-key column order.
    pub fn links_from(&self, table: usize) -> impl Iterator<Item = (usize, &Link)> {
        self.links
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.child == table)
    }

    pub fn link_name(&self, link: &Link) -> String {
        format!(
            "{}.{}->{}",
            self.tables[link.child].name, link.fk_column, self.tables[link.parent].name
        )
    }

    /// Tables in an order where every parent precedes its children.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.tables.len();
        let mut pending: Vec<usize> = (0..n)
            .map(|i| self.links_from(i).count())
            .collect();
        let mut order: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
        if order.is_empty() && n > 0 {
            return Err(Error::validation(
                &self.tables[0].name,
                "no root tables: every table has a foreign key",
            ));
        }
        let mut head = 0;
        while head < order.len() {
            let parent = order[head];
            head += 1;
            for l in &self.links {
                if l.parent == parent {
                    pending[l.child] -= 1;
                    if pending[l.child] == 0 {
                        order.push(l.child);
                    }
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|i| !order.contains(i)).unwrap();
            return Err(Error::validation(
                &self.tables[stuck].name,
                "foreign keys form a cycle",
            ));
        }
        Ok(order)
    }

    /// Stable content hash of the schema document.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("schema serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<DatabaseSchema> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatabaseSchema::from_json_str(&text)
}

/// Tables with no foreign-key columns.
pub fn root_tables(schema: &DatabaseSchema) -> BTreeSet<String> {
    schema
        .tables()
        .iter()
        .filter(|t| t.foreign_keys().next().is_none())
        .map(|t| t.name.clone())
        .collect()
}

/// An attribute cell. Datetimes are carried as epoch seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Category(String),
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Value::Category(s) => Some(s),
            Value::Number(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Category(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub key: String,
    /// Referenced parent keys, in foreign-key column order.
    pub foreign: Vec<String>,
    /// Attribute values, in attribute column order.
    pub attributes: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub rows: Vec<Row>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, attribute: usize) -> impl Iterator<Item = &Value> {
        self.rows.iter().map(move |r| &r.attributes[attribute])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    schema: DatabaseSchema,
    tables: Vec<Table>,
}

impl Database {
    /// Builds a database, checking key uniqueness, referential integrity and attribute arity.
    pub fn new(schema: DatabaseSchema, tables: Vec<Table>) -> Result<Self> {
        if tables.len() != schema.tables().len() {
            return Err(Error::Data {
                table: String::new(),
                row: None,
                message: format!(
                    "expected {} tables, got {}",
                    schema.tables().len(),
                    tables.len()
                ),
            });
        }
        let mut key_sets = Vec::with_capacity(tables.len());
        for (ts, table) in schema.tables().iter().zip(&tables) {
            let mut keys = HashSet::with_capacity(table.len());
            for (i, row) in table.rows.iter().enumerate() {
                if !keys.insert(row.key.as_str()) {
                    return Err(Error::data(
                        &ts.name,
                        Some(i),
                        format!("duplicate primary key `{}`", row.key),
                    ));
                }
            }
            key_sets.push(keys);
        }
        for (ti, (ts, table)) in schema.tables().iter().zip(&tables).enumerate() {
            let kinds: Vec<ColumnKind> = ts.attributes().map(|c| c.kind).collect();
            let fk_parents: Vec<usize> = schema.links_from(ti).map(|(_, l)| l.parent).collect();
            for (i, row) in table.rows.iter().enumerate() {
                if row.foreign.len() != fk_parents.len() {
                    return Err(Error::data(&ts.name, Some(i), "foreign key arity mismatch"));
                }
                if row.attributes.len() != kinds.len() {
                    return Err(Error::data(&ts.name, Some(i), "attribute arity mismatch"));
                }
                for ((value, &parent), fk) in
                    row.foreign.iter().zip(&fk_parents).zip(ts.foreign_keys())
                {
                    if !key_sets[parent].contains(value.as_str()) {
                        return Err(Error::data(
                            &ts.name,
                            Some(i),
                            format!(
                                "referential integrity violation: `{}`={value} not found in `{}`",
                                fk.name,
                                schema.table(parent).name
                            ),
                        ));
                    }
                }
                for ((value, kind), col) in row.attributes.iter().zip(&kinds).zip(ts.attributes()) {
                    let ok = match (kind, value) {
                        (ColumnKind::Categorical, Value::Category(_)) => true,
                        (ColumnKind::Numerical | ColumnKind::Datetime, Value::Number(x)) => {
                            x.is_finite()
                        }
                        _ => false,
                    };
                    if !ok {
                        return Err(Error::data(
                            &ts.name,
                            Some(i),
                            format!("value `{value}` does not match kind of `{}`", col.name),
                        ));
                    }
                }
            }
        }
        Ok(Self { schema, tables })
    }

    pub fn schema(&self) -> &DatabaseSchema {
        &self.schema
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn table(&self, index: usize) -> &Table {
        &self.tables[index]
    }

    pub fn table_by_name(&self, name: &str) -> Option<&Table> {
        self.schema.table_index(name).map(|i| &self.tables[i])
    }

    pub fn row_counts(&self) -> Vec<(String, usize)> {
        self.schema
            .tables()
            .iter()
            .zip(&self.tables)
            .map(|(s, t)| (s.name.clone(), t.len()))
            .collect()
    }

    /// Row index of each key, per table.
    pub fn key_index(&self, table: usize) -> HashMap<&str, usize> {
        self.tables[table]
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.key.as_str(), i))
            .collect()
    }

    /// For each link, the parent row index referenced by every child row.
    pub fn link_targets(&self) -> Vec<Vec<usize>> {
        let indices: Vec<HashMap<&str, usize>> =
            (0..self.tables.len()).map(|t| self.key_index(t)).collect();
        self.schema
            .links()
            .iter()
            .map(|l| {
                self.tables[l.child]
                    .rows
                    .iter()
                    .map(|r| indices[l.parent][r.foreign[l.fk_index].as_str()])
                    .collect()
            })
            .collect()
    }

    /// Exact equality up to relabeling of primary keys, for databases whose rows
    /// appear in the same order.
    pub fn equals_up_to_keys(&self, other: &Database) -> bool {
        if self.schema != other.schema {
            return false;
        }
        if self
            .tables
            .iter()
            .zip(&other.tables)
            .any(|(a, b)| a.len() != b.len())
        {
            return false;
        }
        for (a, b) in self.tables.iter().zip(&other.tables) {
            if a.rows
                .iter()
                .zip(&b.rows)
                .any(|(ra, rb)| ra.attributes != rb.attributes)
            {
                return false;
            }
        }
        self.link_targets() == other.link_targets()
    }
}

fn parse_datetime(text: &str) -> Option<f64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            let utc = dt.and_utc();
            return Some(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() as f64)
}

pub fn format_datetime(seconds: f64) -> String {
    let whole = seconds.floor();
    let nanos = ((seconds - whole) * 1e9).round() as u32;
    let (whole, nanos) = if nanos >= 1_000_000_000 {
        (whole + 1.0, 0)
    } else {
        (whole, nanos)
    };
    match DateTime::from_timestamp(whole as i64, nanos) {
        Some(dt) => dt.naive_utc().format("%Y-%m-%dT%H:%M:%S%.f").to_string(),
        None => format!("{seconds}"),
    }
}

fn parse_cell(table: &str, row: usize, col: &ColumnSpec, text: &str) -> Result<Value> {
    match col.kind {
        ColumnKind::Categorical => Ok(Value::Category(text.to_string())),
        ColumnKind::Numerical => match text.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Value::Number(x)),
            _ => Err(Error::data(
                table,
                Some(row),
                format!("column `{}`: `{text}` is not a finite number", col.name),
            )),
        },
        ColumnKind::Datetime => parse_datetime(text).map(Value::Number).ok_or_else(|| {
            Error::data(
                table,
                Some(row),
                format!("column `{}`: `{text}` is not an ISO-8601 datetime", col.name),
            )
        }),
    }
}

fn read_table(ts: &TableSchema, path: &Path) -> Result<Table> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let expected: BTreeSet<&str> = ts.columns.iter().map(|c| c.name.as_str()).collect();
    let found: BTreeSet<&str> = headers.iter().collect();
    if expected != found || headers.len() != ts.columns.len() {
        return Err(Error::data(
            &ts.name,
            None,
            format!(
                "header mismatch: expected {:?}, found {:?}",
                ts.columns.iter().map(|c| &c.name).collect::<Vec<_>>(),
                headers.iter().collect::<Vec<_>>()
            ),
        ));
    }
    let position = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let pk_pos = position(&ts.primary_key().name);
    let fk_pos: Vec<usize> = ts.foreign_keys().map(|c| position(&c.name)).collect();
    let attrs: Vec<(usize, &ColumnSpec)> = ts.attributes().map(|c| (position(&c.name), c)).collect();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if let Some((j, _)) = record.iter().enumerate().find(|(_, v)| v.is_empty()) {
            return Err(Error::data(
                &ts.name,
                Some(i),
                format!("empty cell in column `{}` (missing values unsupported)", &headers[j]),
            ));
        }
        let attributes = attrs
            .iter()
            .map(|&(p, c)| parse_cell(&ts.name, i, c, &record[p]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            key: record[pk_pos].to_string(),
            foreign: fk_pos.iter().map(|&p| record[p].to_string()).collect(),
            attributes,
        });
    }
    Ok(Table { rows })
}

/// Reads `<table>.csv` for every table of `schema` from `dir`.
pub fn load_database(schema: &DatabaseSchema, dir: impl AsRef<Path>) -> Result<Database> {
    let dir = dir.as_ref();
    let tables = schema
        .tables()
        .iter()
        .map(|ts| read_table(ts, &dir.join(format!("{}.csv", ts.name))))
        .collect::<Result<Vec<_>>>()?;
    Database::new(schema.clone(), tables)
}

/// Writes one `<table>.csv` per table, columns in schema order.
pub fn write_database(db: &Database, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ts, table) in db.schema.tables().iter().zip(&db.tables) {
        let path = dir.join(format!("{}.csv", ts.name));
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(ts.columns.iter().map(|c| c.name.as_str()))?;
        for row in &table.rows {
            let (mut fk, mut attr) = (0, 0);
            let mut record = Vec::with_capacity(ts.columns.len());
            for c in &ts.columns {
                match c.role {
                    ColumnRole::PrimaryKey => record.push(row.key.clone()),
                    ColumnRole::ForeignKey => {
                        record.push(row.foreign[fk].clone());
                        fk += 1;
                    }
                    ColumnRole::Attribute => {
                        let v = &row.attributes[attr];
                        attr += 1;
                        record.push(match (c.kind, v) {
                            (ColumnKind::Datetime, Value::Number(x)) => format_datetime(*x),
                            _ => v.to_string(),
                        });
                    }
                }
            }
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
