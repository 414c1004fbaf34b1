//! Degree-preserving random structure generation.
//!
//! The fitted model keeps, for every edge type, the empirical distribution of the
//! number of children each parent node has. Sampling starts from root tables and
//! walks the schema in topological order: each parent draws an indegree per
//! incoming edge type, spawning that many child stubs. Children of several parent
//! tables are assembled by randomly matching the per-parent stub pools; surplus
//! stubs are dropped so every produced node has all of its foreign keys.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::metrics::ks_complement;
use crate::rng;
use crate::schema::DatabaseSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeModel {
    /// Edge type name -> {indegree: probability}.
    pub indegree: BTreeMap<String, BTreeMap<usize, f64>>,
    /// Root table name -> real node count.
    pub root_counts: BTreeMap<String, usize>,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

/// Alias-free categorical sampler over a fitted indegree pmf.
struct DegreeSampler {
    support: Vec<usize>,
    cumulative: Vec<f64>,
}

impl DegreeSampler {
    fn new(pmf: &BTreeMap<usize, f64>) -> Self {
        let mut acc = 0.0;
        let mut support = Vec::with_capacity(pmf.len());
        let mut cumulative = Vec::with_capacity(pmf.len());
        for (&k, &p) in pmf {
            acc += p;
            support.push(k);
            cumulative.push(acc);
        }
        Self {
            support,
            cumulative,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.support.is_empty() {
            return 0;
        }
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.support[i.min(self.support.len() - 1)]
    }
}

fn edge_type_names(schema: &DatabaseSchema) -> Vec<String> {
    schema.links().iter().map(|l| schema.link_name(l)).collect()
}

pub fn fit_degree_model(g: &HeteroGraph, schema: &DatabaseSchema) -> Result<DegreeModel> {
    if g.total_nodes() == 0 {
        return Err(Error::Graph("cannot fit a degree model on an empty graph".into()));
    }
    let mut indegree = BTreeMap::new();
    for (e, name) in edge_type_names(schema).into_iter().enumerate() {
        let degrees = g.indegrees(e);
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for d in &degrees {
            *counts.entry(*d).or_default() += 1;
        }
        let n = degrees.len().max(1) as f64;
        indegree.insert(
            name,
            counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect(),
        );
    }
    let root_counts = schema
        .tables()
        .iter()
        .enumerate()
        .filter(|(i, _)| schema.links_from(*i).next().is_none())
        .map(|(i, t)| (t.name.clone(), g.node_count(i)))
        .collect();
    Ok(DegreeModel {
        indegree,
        root_counts,
        scale: 1.0,
    })
}

impl DegreeModel {
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

/// Samples a featureless graph whose per-edge-type indegrees follow `model`.
pub fn sample_structure(model: &DegreeModel, schema: &DatabaseSchema, seed: u64) -> Result<HeteroGraph> {
    if !(model.scale.is_finite() && model.scale > 0.0) {
        return Err(Error::Model(format!("scale must be positive, got {}", model.scale)));
    }
    let names = edge_type_names(schema);
    let samplers = names
        .iter()
        .map(|n| {
            model
                .indegree
                .get(n)
                .map(DegreeSampler::new)
                .ok_or_else(|| Error::Model(format!("degree model has no edge type `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;

    let order = schema.topological_order()?;
    let mut counts = vec![0usize; schema.tables().len()];
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); schema.links().len()];

    for &table in &order {
        let incoming: Vec<usize> = schema.links_from(table).map(|(li, _)| li).collect();
        if incoming.is_empty() {
            let name = &schema.table(table).name;
            let real = *model
                .root_counts
                .get(name)
                .ok_or_else(|| Error::Model(format!("degree model has no root table `{name}`")))?;
            // round half up
            counts[table] = (model.scale * real as f64 + 0.5).floor() as usize;
            continue;
        }
        // One stub pool per foreign key; each parent draws its indegree from its own stream.
        let mut pools: Vec<Vec<usize>> = incoming
            .iter()
            .map(|&li| {
                let parent = schema.links()[li].parent;
                let mut pool = Vec::new();
                for p in 0..counts[parent] {
                    let mut r = rng::keyed_stream(seed, &[1, li as u64, p as u64]);
                    let k = samplers[li].draw(&mut r);
                    pool.extend(std::iter::repeat_n(p, k));
                }
                pool
            })
            .collect();

        let n_children = pools.iter().map(Vec::len).min().unwrap_or(0);
        if pools.len() > 1 {
            let mut r = rng::keyed_stream(seed, &[2, table as u64]);
            for pool in &mut pools {
                pool.shuffle(&mut r);
                pool.truncate(n_children);
            }
        }
        counts[table] = n_children;
        for (&li, pool) in incoming.iter().zip(&pools) {
            edges[li] = pool.iter().enumerate().map(|(c, &p)| (c, p)).collect();
        }
    }
    HeteroGraph::new(schema, counts, edges, None)
}

/// Per-edge-type KS complement between real and synthetic indegree distributions.
pub fn cardinality_check(real: &HeteroGraph, synth: &HeteroGraph) -> Result<Vec<f64>> {
    if real.edge_types() != synth.edge_types() {
        return Err(Error::Graph("graphs have different edge types".into()));
    }
    (0..real.edge_types().len())
        .map(|e| {
            let a: Vec<f64> = real.indegrees(e).into_iter().map(|d| d as f64).collect();
            let b: Vec<f64> = synth.indegrees(e).into_iter().map(|d| d as f64).collect();
            ks_complement(&a, &b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnSpec, TableSchema};

    fn two_level() -> DatabaseSchema {
        DatabaseSchema::new(vec![
            TableSchema::new("household", vec![ColumnSpec::primary_key("id")]),
            TableSchema::new(
                "person",
                vec![
                    ColumnSpec::primary_key("id"),
                    ColumnSpec::foreign_key("household_id", "household"),
                ],
            ),
        ])
        .unwrap()
    }

    fn graph_with_indegrees(schema: &DatabaseSchema, degrees: &[usize]) -> HeteroGraph {
        let mut edges = Vec::new();
        for (p, &d) in degrees.iter().enumerate() {
            for _ in 0..d {
                edges.push((edges.len(), p));
            }
        }
        HeteroGraph::new(schema, vec![degrees.len(), edges.len()], vec![edges], None).unwrap()
    }

    #[test]
    fn degenerate_pmf() {
        let schema = two_level();
        let g = graph_with_indegrees(&schema, &[2, 2, 2]);
        let m = fit_degree_model(&g, &schema).unwrap();
        assert_eq!(
            m.indegree["person.household_id->household"],
            BTreeMap::from([(2, 1.0)])
        );
        for seed in 0..5 {
            let s = sample_structure(&m, &schema, seed).unwrap();
            assert_eq!(s.node_counts(), &[3, 6]);
            assert!(s.indegrees(0).iter().all(|&d| d == 2));
        }
        let s = sample_structure(&m.clone().with_scale(2.0), &schema, 0).unwrap();
        assert_eq!(s.node_counts(), &[6, 12]);
    }

    #[test]
    fn uniform_three_support() {
        let schema = two_level();
        let g = graph_with_indegrees(&schema, &[0, 1, 3]);
        let m = fit_degree_model(&g, &schema).unwrap();
        let pmf = &m.indegree["person.household_id->household"];
        assert_eq!(pmf.keys().copied().collect::<Vec<_>>(), vec![0, 1, 3]);
        assert!(pmf.values().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
        assert!((pmf.values().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(m.root_counts["household"], 3);
    }

    #[test]
    fn root_rounding_half_up() {
        let schema = two_level();
        let g = graph_with_indegrees(&schema, &[1]);
        let m = fit_degree_model(&g, &schema).unwrap().with_scale(2.5);
        assert_eq!(sample_structure(&m, &schema, 0).unwrap().node_count(0), 3);
    }

    #[test]
    fn missing_edge_type_is_mismatch() {
        let schema = two_level();
        let g = graph_with_indegrees(&schema, &[1]);
        let mut m = fit_degree_model(&g, &schema).unwrap();
        m.indegree.clear();
        assert!(sample_structure(&m, &schema, 0).is_err());
    }

    #[test]
    fn cardinality_scores() {
        let schema = two_level();
        let a = graph_with_indegrees(&schema, &[2, 2, 2]);
        let b = graph_with_indegrees(&schema, &[3, 3, 3]);
        assert_eq!(cardinality_check(&a, &a).unwrap(), vec![100.0]);
        assert_eq!(cardinality_check(&a, &b).unwrap(), vec![0.0]);
    }
}
