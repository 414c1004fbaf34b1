//! Brute-force reference implementations shared by the integration tests.
//!
//! These deliberately avoid the library's helpers: joins match key strings row by
//! row, CDFs are evaluated by counting, and table distances come from
//! Floyd–Warshall.

#![allow(dead_code)]

use std::collections::HashMap;

use relsynth::schema::{ColumnKind, Database, Row, Value};

pub fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    let mut sup: f64 = 0.0;
    for &x in a.iter().chain(b) {
        sup = sup.max((cdf(a, x) - cdf(b, x)).abs());
    }
    100.0 * (1.0 - sup)
}

pub fn tv_oracle(a: &[String], b: &[String]) -> f64 {
    let mut pa: HashMap<&str, f64> = HashMap::new();
    let mut pb: HashMap<&str, f64> = HashMap::new();
    for s in a {
        *pa.entry(s).or_default() += 1.0 / a.len() as f64;
    }
    for s in b {
        *pb.entry(s).or_default() += 1.0 / b.len() as f64;
    }
    let mut keys: Vec<&str> = pa.keys().chain(pb.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let tv: f64 = keys
        .iter()
        .map(|k| (pa.get(k).unwrap_or(&0.0) - pb.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
        / 2.0;
    100.0 * (1.0 - tv)
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if x.len() < 2 || vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Deciles by linear interpolation between order statistics.
fn decile_oracle(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..10)
        .map(|i| {
            let h = (s.len() - 1) as f64 * i as f64 / 10.0;
            let lo = h.floor() as usize;
            if lo + 1 >= s.len() {
                s[lo]
            } else {
                s[lo] + (h - lo as f64) * (s[lo + 1] - s[lo])
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum Col {
    Num(Vec<f64>),
    Cat(Vec<String>),
}

impl Col {
    fn len(&self) -> usize {
        match self {
            Col::Num(v) => v.len(),
            Col::Cat(v) => v.len(),
        }
    }

    fn labels(&self, edges: &Option<Vec<f64>>) -> Vec<String> {
        match self {
            Col::Cat(v) => v.iter().map(|s| format!("c:{s}")).collect(),
            Col::Num(v) => {
                let e = edges.as_ref().unwrap();
                v.iter()
                    .map(|x| format!("b:{}", e.iter().filter(|&&t| t <= *x).count()))
                    .collect()
            }
        }
    }
}

pub fn pair_oracle(ra: &Col, rb: &Col, sa: &Col, sb: &Col) -> f64 {
    if ra.len() == 0 || sa.len() == 0 {
        return 0.0;
    }
    if let (Col::Num(x), Col::Num(y), Col::Num(u), Col::Num(v)) = (ra, rb, sa, sb) {
        let r = pearson_oracle(x, y);
        let s = pearson_oracle(u, v);
        return 100.0 * (1.0 - (s - r).abs() / 2.0);
    }
    let edges = |c: &Col| match c {
        Col::Num(v) => Some(decile_oracle(v)),
        Col::Cat(_) => None,
    };
    let (ea, eb) = (edges(ra), edges(rb));
    let joint = |a: &Col, b: &Col| -> Vec<String> {
        a.labels(&ea)
            .into_iter()
            .zip(b.labels(&eb))
            .map(|(x, y)| format!("{x}|{y}"))
            .collect()
    };
    tv_oracle(&joint(ra, rb), &joint(sa, sb))
}

fn column(db: &Database, t: usize, j: usize, rows: &[&Row]) -> Col {
    let kind = db.schema().table(t).attributes().nth(j).unwrap().kind;
    match kind {
        ColumnKind::Categorical => Col::Cat(
            rows.iter()
                .map(|r| match &r.attributes[j] {
                    Value::Category(s) => s.clone(),
                    v => panic!("unexpected {v:?}"),
                })
                .collect(),
        ),
        _ => Col::Num(rows.iter().map(|r| r.attributes[j].as_number().unwrap()).collect()),
    }
}

fn all_rows(db: &Database, t: usize) -> Vec<&Row> {
    db.table(t).rows.iter().collect()
}

fn attr_count(db: &Database, t: usize) -> usize {
    db.schema().table(t).attribute_count()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn cardinality_oracle(real: &Database, synth: &Database) -> Option<f64> {
    let counts = |db: &Database, li: usize| -> Vec<f64> {
        let l = &db.schema().links()[li];
        db.table(l.parent)
            .rows
            .iter()
            .map(|p| {
                db.table(l.child)
                    .rows
                    .iter()
                    .filter(|c| c.foreign[l.fk_index] == p.key)
                    .count() as f64
            })
            .collect()
    };
    let scores: Vec<f64> = (0..real.schema().links().len())
        .map(|li| ks_oracle(&counts(real, li), &counts(synth, li)))
        .collect();
    mean(&scores)
}

pub fn column_shapes_oracle(real: &Database, synth: &Database) -> Option<f64> {
    let mut scores = Vec::new();
    for t in 0..real.tables().len() {
        for j in 0..attr_count(real, t) {
            let a = column(real, t, j, &all_rows(real, t));
            let b = column(synth, t, j, &all_rows(synth, t));
            scores.push(match (a, b) {
                (Col::Num(x), Col::Num(y)) => ks_oracle(&x, &y),
                (Col::Cat(x), Col::Cat(y)) => tv_oracle(&x, &y),
                _ => unreachable!(),
            });
        }
    }
    mean(&scores)
}

pub fn intra_oracle(real: &Database, synth: &Database) -> Option<f64> {
    let mut scores = Vec::new();
    for t in 0..real.tables().len() {
        let (rr, sr) = (all_rows(real, t), all_rows(synth, t));
        let m = attr_count(real, t);
        for a in 0..m {
            for b in a + 1..m {
                scores.push(pair_oracle(
                    &column(real, t, a, &rr),
                    &column(real, t, b, &rr),
                    &column(synth, t, a, &sr),
                    &column(synth, t, b, &sr),
                ));
            }
        }
    }
    mean(&scores)
}

/// All-pairs table distances over the undirected link graph.
pub fn table_distance_oracle(db: &Database) -> Vec<Vec<usize>> {
    let n = db.tables().len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for l in db.schema().links() {
        d[l.child][l.parent] = 1;
        d[l.parent][l.child] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Every walk of exactly `len` links from `a` to `b`, as `(link, upward)` steps.
fn walks(db: &Database, a: usize, b: usize, len: usize) -> Vec<Vec<(usize, bool)>> {
    if len == 0 {
        return if a == b { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for (li, l) in db.schema().links().iter().enumerate() {
        let mut moves = Vec::new();
        if l.child == a {
            moves.push((l.parent, true));
        }
        if l.parent == a {
            moves.push((l.child, false));
        }
        for (next, up) in moves {
            for mut rest in walks(db, next, b, len - 1) {
                rest.insert(0, (li, up));
                out.push(rest);
            }
        }
    }
    out
}

/// Row pairs of the inner join along `path`, matching key strings directly.
fn join_oracle<'a>(db: &'a Database, a: usize, path: &[(usize, bool)]) -> Vec<(&'a Row, &'a Row)> {
    let mut tuples: Vec<(&Row, &Row)> = db.table(a).rows.iter().map(|r| (r, r)).collect();
    for &(li, up) in path {
        let l = &db.schema().links()[li];
        let mut next = Vec::new();
        for (first, cur) in tuples {
            if up {
                for p in &db.table(l.parent).rows {
                    if cur.foreign[l.fk_index] == p.key {
                        next.push((first, p));
                    }
                }
            } else {
                for c in &db.table(l.child).rows {
                    if c.foreign[l.fk_index] == cur.key {
                        next.push((first, c));
                    }
                }
            }
        }
        tuples = next;
    }
    tuples
}

pub fn inter_oracle(real: &Database, synth: &Database, k: usize) -> Option<f64> {
    let d = table_distance_oracle(real);
    let n = real.tables().len();
    let mut scores = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if d[a][b] != k {
                continue;
            }
            let paths = walks(real, a, b, k);
            for i in 0..attr_count(real, a) {
                for j in 0..attr_count(real, b) {
                    let mut total = 0.0;
                    for p in &paths {
                        let rj = join_oracle(real, a, p);
                        let sj = join_oracle(synth, a, p);
                        let (rl, rr): (Vec<&Row>, Vec<&Row>) = rj.into_iter().unzip();
                        let (sl, sr): (Vec<&Row>, Vec<&Row>) = sj.into_iter().unzip();
                        total += pair_oracle(
                            &column(real, a, i, &rl),
                            &column(real, b, j, &rr),
                            &column(synth, a, i, &sl),
                            &column(synth, b, j, &sr),
                        );
                    }
                    scores.push(total / paths.len() as f64);
                }
            }
        }
    }
    mean(&scores)
}
