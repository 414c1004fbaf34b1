//! Fidelity metrics comparing a real and a synthetic database.
//!
//! Every score lies in `[0, 100]`, higher meaning closer to the real data.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, Database, DatabaseSchema, Value};

/// Number of bins used when a numerical column meets a categorical one.
pub const MIXED_PAIR_BINS: usize = 10;

/// `(1 − sup_x |F_real(x) − F_synth(x)|) · 100` over empirical CDFs.
pub fn ks_complement(real: &[f64], synth: &[f64]) -> Result<f64> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Model("KS statistic needs two nonempty samples".into()));
    }
    let mut a = real.to_vec();
    let mut b = synth.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok((1.0 - sup) * 100.0)
}

fn frequencies<T: Ord + Clone>(sample: &[T]) -> BTreeMap<T, f64> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in sample {
        *counts.entry(v.clone()).or_default() += 1;
    }
    let n = sample.len() as f64;
    counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect()
}

/// `(1 − TV) · 100` with `TV = ½ Σ_ω |R_ω − S_ω|` over the union of observed categories.
pub fn tv_complement<T: Ord + Clone>(real: &[T], synth: &[T]) -> Result<f64> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::Model("TV distance needs two nonempty samples".into()));
    }
    let r = frequencies(real);
    let s = frequencies(synth);
    let keys: BTreeSet<&T> = r.keys().chain(s.keys()).collect();
    let tv: f64 = keys
        .into_iter()
        .map(|k| (r.get(k).copied().unwrap_or(0.0) - s.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        / 2.0;
    Ok(((1.0 - tv) * 100.0).clamp(0.0, 100.0))
}

/// Pearson correlation; `None` when either column has zero variance or fewer than two rows.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One column's values, as seen by the metrics.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numerical(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numerical(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_values<'a>(kind: ColumnKind, values: impl Iterator<Item = &'a Value>) -> Self {
        match kind {
            ColumnKind::Categorical => ColumnData::Categorical(values.map(|v| v.to_string()).collect()),
            ColumnKind::Numerical | ColumnKind::Datetime => {
                ColumnData::Numerical(values.map(|v| v.as_number().unwrap_or(f64::NAN)).collect())
            }
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            ColumnData::Numerical(v) => ColumnData::Numerical(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Cell {
    Bin(usize),
    Label(String),
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Interior bin edges at the deciles of `real`.
pub fn decile_edges(real: &[f64]) -> Vec<f64> {
    let mut s = real.to_vec();
    s.sort_by(f64::total_cmp);
    (1..MIXED_PAIR_BINS)
        .map(|i| quantile(&s, i as f64 / MIXED_PAIR_BINS as f64))
        .collect()
}

fn cells(col: &ColumnData, edges: Option<&[f64]>) -> Vec<Cell> {
    match col {
        ColumnData::Categorical(v) => v.iter().map(|s| Cell::Label(s.clone())).collect(),
        ColumnData::Numerical(v) => {
            let edges = edges.expect("numerical column needs bin edges");
            v.iter().map(|&x| Cell::Bin(edges.partition_point(|&e| e <= x))).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub score: f64,
    /// A Pearson side had zero variance, or a side had no rows.
    pub degenerate: bool,
}

/// Similarity of the joint behavior of two columns in real versus synthetic rows.
///
/// Two numerical columns compare Pearson correlations; any other combination
/// compares normalized contingency tables by total variation, after binning a
/// numerical partner at the real data's deciles.
pub fn pair_trend_score(
    real: (&ColumnData, &ColumnData),
    synth: (&ColumnData, &ColumnData),
) -> Result<PairScore> {
    if real.0.len() != real.1.len() || synth.0.len() != synth.1.len() {
        return Err(Error::Model("paired columns differ in length".into()));
    }
    if real.0.is_empty() || synth.0.is_empty() {
        return Ok(PairScore {
            score: 0.0,
            degenerate: true,
        });
    }
    match (real, synth) {
        (
            (ColumnData::Numerical(ra), ColumnData::Numerical(rb)),
            (ColumnData::Numerical(sa), ColumnData::Numerical(sb)),
        ) => {
            let r = pearson(ra, rb);
            let s = pearson(sa, sb);
            let (r0, s0) = (r.unwrap_or(0.0), s.unwrap_or(0.0));
            Ok(PairScore {
                score: ((1.0 - (s0 - r0).abs() / 2.0) * 100.0).clamp(0.0, 100.0),
                degenerate: r.is_none() || s.is_none(),
            })
        }
        _ => {
            let edges = |c: &ColumnData| match c {
                ColumnData::Numerical(v) => Some(decile_edges(v)),
                ColumnData::Categorical(_) => None,
            };
            let (ea, eb) = (edges(real.0), edges(real.1));
            let joint = |a: &ColumnData, b: &ColumnData| -> Result<Vec<(Cell, Cell)>> {
                if std::mem::discriminant(a) != std::mem::discriminant(real.0)
                    || std::mem::discriminant(b) != std::mem::discriminant(real.1)
                {
                    return Err(Error::Model("column kinds differ between databases".into()));
                }
                Ok(cells(a, ea.as_deref())
                    .into_iter()
                    .zip(cells(b, eb.as_deref()))
                    .collect())
            };
            let r = joint(real.0, real.1)?;
            let s = joint(synth.0, synth.1)?;
            Ok(PairScore {
                score: tv_complement(&r, &s)?,
                degenerate: false,
            })
        }
    }
}

/// Scores keyed by what they measure, with their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Breakdown {
    /// Mean of `items`; absent when there is nothing to score.
    pub overall: Option<f64>,
    pub items: BTreeMap<String, f64>,
    /// Items whose score involved a degenerate (constant or empty) column.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl Breakdown {
    fn from_items(items: BTreeMap<String, f64>, degenerate: Vec<String>) -> Self {
        let overall = if items.is_empty() {
            None
        } else {
            Some(items.values().sum::<f64>() / items.len() as f64)
        };
        Self {
            overall,
            items,
            degenerate,
        }
    }
}

fn check_schemas(real: &Database, synth: &Database) -> Result<()> {
    if real.schema() != synth.schema() {
        return Err(Error::validation("", "real and synthetic databases have different schemas"));
    }
    Ok(())
}

fn attribute_columns(db: &Database, table: usize) -> Vec<(String, ColumnData)> {
    db.schema()
        .table(table)
        .attributes()
        .enumerate()
        .map(|(j, c)| (c.name.clone(), ColumnData::from_values(c.kind, db.table(table).column(j))))
        .collect()
}

/// Per link, child counts of every parent row, including parents without children.
pub fn child_counts(db: &Database) -> Vec<Vec<f64>> {
    let schema = db.schema();
    db.link_targets()
        .into_iter()
        .zip(schema.links())
        .map(|(targets, l)| {
            let mut counts = vec![0.0; db.table(l.parent).len()];
            for p in targets {
                counts[p] += 1.0;
            }
            counts
        })
        .collect()
}

pub fn cardinality_metric(real: &Database, synth: &Database) -> Result<Breakdown> {
    check_schemas(real, synth)?;
    let schema = real.schema();
    let mut items = BTreeMap::new();
    let mut degenerate = Vec::new();
    for ((l, r), s) in schema.links().iter().zip(child_counts(real)).zip(child_counts(synth)) {
        let name = schema.link_name(l);
        let score = if r.is_empty() || s.is_empty() {
            degenerate.push(name.clone());
            if r.len() == s.len() { 100.0 } else { 0.0 }
        } else {
            ks_complement(&r, &s)?
        };
        items.insert(name, score);
    }
    Ok(Breakdown::from_items(items, degenerate))
}

pub fn column_shapes(real: &Database, synth: &Database) -> Result<Breakdown> {
    check_schemas(real, synth)?;
    let mut items = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (t, ts) in real.schema().tables().iter().enumerate() {
        for ((name, r), (_, s)) in attribute_columns(real, t).into_iter().zip(attribute_columns(synth, t)) {
            let key = format!("{}.{}", ts.name, name);
            let score = if r.is_empty() || s.is_empty() {
                degenerate.push(key.clone());
                if r.len() == s.len() { 100.0 } else { 0.0 }
            } else {
                match (&r, &s) {
                    (ColumnData::Numerical(a), ColumnData::Numerical(b)) => ks_complement(a, b)?,
                    (ColumnData::Categorical(a), ColumnData::Categorical(b)) => tv_complement(a, b)?,
                    _ => unreachable!("schemas are equal"),
                }
            };
            items.insert(key, score);
        }
    }
    Ok(Breakdown::from_items(items, degenerate))
}

pub fn intra_table_trends(real: &Database, synth: &Database) -> Result<Breakdown> {
    check_schemas(real, synth)?;
    let mut items = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (t, ts) in real.schema().tables().iter().enumerate() {
        let r = attribute_columns(real, t);
        let s = attribute_columns(synth, t);
        for a in 0..r.len() {
            for b in a + 1..r.len() {
                let key = format!("{}: {} ~ {}", ts.name, r[a].0, r[b].0);
                let p = pair_trend_score((&r[a].1, &r[b].1), (&s[a].1, &s[b].1))?;
                if p.degenerate {
                    degenerate.push(key.clone());
                }
                items.insert(key, p.score);
            }
        }
    }
    Ok(Breakdown::from_items(items, degenerate))
}

/// One step of a join path through the schema's link graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinStep {
    pub link: usize,
    /// Walking from the child table to the parent table.
    pub up: bool,
}

/// Undirected adjacency of the link graph: per table, `(neighbor, step)`.
fn link_graph(schema: &DatabaseSchema) -> Vec<Vec<(usize, JoinStep)>> {
    let mut adj = vec![Vec::new(); schema.tables().len()];
    for (li, l) in schema.links().iter().enumerate() {
        adj[l.child].push((l.parent, JoinStep { link: li, up: true }));
        adj[l.parent].push((l.child, JoinStep { link: li, up: false }));
    }
    adj
}

/// Link-graph distances from `source`; `None` for unreachable tables.
pub fn table_distances(schema: &DatabaseSchema, source: usize) -> Vec<Option<usize>> {
    let adj = link_graph(schema);
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Every shortest join path from table `a` to table `b`.
pub fn shortest_join_paths(schema: &DatabaseSchema, a: usize, b: usize) -> Vec<Vec<JoinStep>> {
    let adj = link_graph(schema);
    let to_b = table_distances(schema, b);
    let Some(total) = to_b[a] else {
        return Vec::new();
    };
    let mut paths = Vec::new();
    let mut stack: Vec<(usize, Vec<JoinStep>)> = vec![(a, Vec::new())];
    while let Some((u, path)) = stack.pop() {
        if path.len() == total {
            paths.push(path);
            continue;
        }
        for &(v, step) in &adj[u] {
            if to_b[v] == Some(total - path.len() - 1) {
                let mut next = path.clone();
                next.push(step);
                stack.push((v, next));
            }
        }
    }
    paths.sort_by_key(|p| p.iter().map(|s| (s.link, s.up)).collect::<Vec<_>>());
    paths
}

/// Inner join along `path`, as `(row of the first table, row of the last table)` pairs.
pub fn join_rows(db: &Database, start: usize, path: &[JoinStep]) -> Vec<(usize, usize)> {
    let targets = db.link_targets();
    let schema = db.schema();
    let mut children: Vec<Option<Vec<Vec<usize>>>> = vec![None; schema.links().len()];
    let mut rows: Vec<(usize, usize)> = (0..db.table(start).len()).map(|i| (i, i)).collect();
    for step in path {
        let tgt = &targets[step.link];
        rows = if step.up {
            rows.into_iter().map(|(s, c)| (s, tgt[c])).collect()
        } else {
            let kids = children[step.link].get_or_insert_with(|| {
                let mut k = vec![Vec::new(); db.table(schema.links()[step.link].parent).len()];
                for (c, &p) in tgt.iter().enumerate() {
                    k[p].push(c);
                }
                k
            });
            rows.into_iter()
                .flat_map(|(s, p)| kids[p].iter().map(move |&c| (s, c)))
                .collect()
        };
    }
    rows
}

/// Column-pair trends across tables exactly `k` links apart.
///
/// Returns `None` when no pair of tables is at distance `k`.
pub fn inter_table_trends(real: &Database, synth: &Database, k: usize) -> Result<Option<Breakdown>> {
    check_schemas(real, synth)?;
    if k == 0 {
        return Err(Error::Usage("inter-table distance must be at least 1".into()));
    }
    let schema = real.schema();
    let n = schema.tables().len();
    let mut any = false;
    let mut items = BTreeMap::new();
    let mut degenerate = Vec::new();
    for a in 0..n {
        let dist = table_distances(schema, a);
        for b in a + 1..n {
            if dist[b] != Some(k) {
                continue;
            }
            any = true;
            let ra = attribute_columns(real, a);
            let rb = attribute_columns(real, b);
            let sa = attribute_columns(synth, a);
            let sb = attribute_columns(synth, b);
            if ra.is_empty() || rb.is_empty() {
                continue;
            }
            let paths = shortest_join_paths(schema, a, b);
            let mut sums = vec![vec![0.0; rb.len()]; ra.len()];
            let mut flags = vec![vec![false; rb.len()]; ra.len()];
            for path in &paths {
                let rj = join_rows(real, a, path);
                let sj = join_rows(synth, a, path);
                let (rl, rr): (Vec<usize>, Vec<usize>) = rj.into_iter().unzip();
                let (sl, sr): (Vec<usize>, Vec<usize>) = sj.into_iter().unzip();
                let rcols_a: Vec<ColumnData> = ra.iter().map(|(_, c)| c.select(&rl)).collect();
                let rcols_b: Vec<ColumnData> = rb.iter().map(|(_, c)| c.select(&rr)).collect();
                let scols_a: Vec<ColumnData> = sa.iter().map(|(_, c)| c.select(&sl)).collect();
                let scols_b: Vec<ColumnData> = sb.iter().map(|(_, c)| c.select(&sr)).collect();
                for i in 0..ra.len() {
                    for j in 0..rb.len() {
                        let p = pair_trend_score((&rcols_a[i], &rcols_b[j]), (&scols_a[i], &scols_b[j]))?;
                        sums[i][j] += p.score;
                        flags[i][j] |= p.degenerate;
                    }
                }
            }
            let (ta, tb) = (&schema.table(a).name, &schema.table(b).name);
            for i in 0..ra.len() {
                for j in 0..rb.len() {
                    let key = format!("{ta}.{} ~ {tb}.{}", ra[i].0, rb[j].0);
                    if flags[i][j] {
                        degenerate.push(key.clone());
                    }
                    items.insert(key, sums[i][j] / paths.len() as f64);
                }
            }
        }
    }
    Ok(any.then(|| Breakdown::from_items(items, degenerate)))
}

/// Largest finite distance between two tables of the schema.
pub fn max_table_distance(schema: &DatabaseSchema) -> usize {
    (0..schema.tables().len())
        .flat_map(|a| table_distances(schema, a).into_iter().flatten())
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub cardinality: Breakdown,
    pub column_shapes: Breakdown,
    pub intra_table_trends: Breakdown,
    /// Keyed by link distance `k`.
    pub inter_table_trends: BTreeMap<usize, Breakdown>,
}

/// Full report, with inter-table trends for every distance present in the schema.
pub fn evaluate(real: &Database, synth: &Database) -> Result<FidelityReport> {
    let mut inter = BTreeMap::new();
    for k in 1..=max_table_distance(real.schema()) {
        if let Some(b) = inter_table_trends(real, synth, k)? {
            inter.insert(k, b);
        }
    }
    Ok(FidelityReport {
        cardinality: cardinality_metric(real, synth)?,
        column_shapes: column_shapes(real, synth)?,
        intra_table_trends: intra_table_trends(real, synth)?,
        inter_table_trends: inter,
    })
}

impl FidelityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text summary table followed by every breakdown.
    pub fn to_text(&self) -> String {
        let fmt = |o: Option<f64>| o.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        let mut sections: Vec<(String, &Breakdown)> = vec![
            ("Cardinality".into(), &self.cardinality),
            ("Column Shapes".into(), &self.column_shapes),
            ("Intra-Table Trends".into(), &self.intra_table_trends),
        ];
        for (k, b) in &self.inter_table_trends {
            sections.push((format!("Inter-Table Trends ({k}-hop)"), b));
        }
        let mut out = String::new();
        for (label, b) in &sections {
            let _ = writeln!(out, "{label:<28} {:>8}", fmt(b.overall));
        }
        for (label, b) in &sections {
            let _ = writeln!(out, "\n[{label}]");
            for (k, v) in &b.items {
                let flag = if b.degenerate.contains(k) { "  (degenerate)" } else { "" };
                let _ = writeln!(out, "  {k:<50} {v:>8.2}{flag}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_examples() {
        let x = [0.3, 1.0, -2.0];
        assert_eq!(ks_complement(&x, &x).unwrap(), 100.0);
        assert_eq!(ks_complement(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        let s = ks_complement(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 10.0]).unwrap();
        assert!((s - 75.0).abs() < 1e-12);
        assert!(ks_complement(&[], &[1.0]).is_err());
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_complement(&["a", "b"], &["b", "a"]).unwrap(), 100.0);
        assert_eq!(tv_complement(&["a"], &["b"]).unwrap(), 0.0);
        let s = tv_complement(&["a", "b"], &["a", "a", "a", "b"]).unwrap();
        assert!((s - 75.0).abs() < 1e-12);
        assert!(tv_complement::<&str>(&[], &["a"]).is_err());
    }

    #[test]
    fn pearson_opposite_and_constant() {
        let x = ColumnData::Numerical(vec![1.0, 2.0, 3.0]);
        let up = ColumnData::Numerical(vec![2.0, 4.0, 6.0]);
        let down = ColumnData::Numerical(vec![6.0, 4.0, 2.0]);
        let flat = ColumnData::Numerical(vec![5.0, 5.0, 5.0]);
        let p = pair_trend_score((&x, &up), (&x, &down)).unwrap();
        assert!(p.score.abs() < 1e-12 && !p.degenerate);
        let p = pair_trend_score((&x, &up), (&x, &flat)).unwrap();
        assert!((p.score - 50.0).abs() < 1e-12 && p.degenerate);
    }

    #[test]
    fn mixed_pair_uses_real_deciles() {
        let num: Vec<f64> = (0..20).map(f64::from).collect();
        let edges = decile_edges(&num);
        assert_eq!(edges.len(), 9);
        assert!((edges[0] - 1.9).abs() < 1e-12);
        let cat = ColumnData::Categorical(num.iter().map(|&v| if v < 10.0 { "lo" } else { "hi" }.to_string()).collect());
        let col = ColumnData::Numerical(num);
        let p = pair_trend_score((&col, &cat), (&col, &cat)).unwrap();
        assert_eq!(p.score, 100.0);
    }
}
