//! Heterogeneous graph view of a relational database.
//!
//! Each row becomes a node typed by its table, and each foreign-key value becomes
//! a directed edge from the child row to the parent row, typed by the foreign-key
//! column. Keys are not stored: they are fully described by the edges, and
//! [`graph_to_rdb`] assigns fresh ones.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::schema::{Database, DatabaseSchema, Row, Table, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeType {
    pub child: usize,
    pub fk_column: String,
    pub parent: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub node_type: usize,
    pub index: usize,
}

impl NodeRef {
    pub fn new(node_type: usize, index: usize) -> Self {
        Self { node_type, index }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    node_types: Vec<String>,
    node_counts: Vec<usize>,
    edge_types: Vec<EdgeType>,
    /// Per edge type, directed `(child, parent)` node index pairs.
    edges: Vec<Vec<(usize, usize)>>,
    /// Raw attribute tuples per node; `None` for featureless structure graphs.
    attributes: Option<Vec<Vec<Vec<Value>>>>,
}

impl HeteroGraph {
    /// Builds a graph whose node and edge types follow `schema`.
    pub fn new(
        schema: &DatabaseSchema,
        node_counts: Vec<usize>,
        edges: Vec<Vec<(usize, usize)>>,
        attributes: Option<Vec<Vec<Vec<Value>>>>,
    ) -> Result<Self> {
        let node_types: Vec<String> = schema.tables().iter().map(|t| t.name.clone()).collect();
        let edge_types: Vec<EdgeType> = schema
            .links()
            .iter()
            .map(|l| EdgeType {
                child: l.child,
                fk_column: l.fk_column.clone(),
                parent: l.parent,
            })
            .collect();
        if node_counts.len() != node_types.len() {
            return Err(Error::Graph("node type count mismatch".into()));
        }
        if edges.len() != edge_types.len() {
            return Err(Error::Graph("edge type count mismatch".into()));
        }
        for (et, list) in edge_types.iter().zip(&edges) {
            if et.child == et.parent {
                return Err(Error::Graph("edge type joins a node type to itself".into()));
            }
            if list
                .iter()
                .any(|&(c, p)| c >= node_counts[et.child] || p >= node_counts[et.parent])
            {
                return Err(Error::Graph(format!(
                    "edge of type `{}` has an endpoint out of range",
                    et.fk_column
                )));
            }
        }
        if let Some(attrs) = &attributes {
            if attrs.len() != node_types.len()
                || attrs.iter().zip(&node_counts).any(|(a, &n)| a.len() != n)
            {
                return Err(Error::Graph("attribute table shape mismatch".into()));
            }
        }
        Ok(Self {
            node_types,
            node_counts,
            edge_types,
            edges,
            attributes,
        })
    }

    pub fn node_types(&self) -> &[String] {
        &self.node_types
    }

    pub fn node_count(&self, node_type: usize) -> usize {
        self.node_counts[node_type]
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts
    }

    pub fn total_nodes(&self) -> usize {
        self.node_counts.iter().sum()
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn edges(&self, edge_type: usize) -> &[(usize, usize)] {
        &self.edges[edge_type]
    }

    pub fn attributes(&self) -> Option<&Vec<Vec<Vec<Value>>>> {
        self.attributes.as_ref()
    }

    pub fn with_attributes(mut self, attributes: Vec<Vec<Vec<Value>>>) -> Result<Self> {
        if attributes.len() != self.node_types.len()
            || attributes
                .iter()
                .zip(&self.node_counts)
                .any(|(a, &n)| a.len() != n)
        {
            return Err(Error::Graph("attribute table shape mismatch".into()));
        }
        self.attributes = Some(attributes);
        Ok(self)
    }

    pub fn without_attributes(mut self) -> Self {
        self.attributes = None;
        self
    }

    /// Number of incoming edges of `edge_type` at every parent-type node.
    pub fn indegrees(&self, edge_type: usize) -> Vec<usize> {
        let mut deg = vec![0; self.node_counts[self.edge_types[edge_type].parent]];
        for &(_, p) in &self.edges[edge_type] {
            deg[p] += 1;
        }
        deg
    }

    /// Number of outgoing edges of `edge_type` at every child-type node.
    pub fn outdegrees(&self, edge_type: usize) -> Vec<usize> {
        let mut deg = vec![0; self.node_counts[self.edge_types[edge_type].child]];
        for &(c, _) in &self.edges[edge_type] {
            deg[c] += 1;
        }
        deg
    }

    pub fn undirected(&self) -> UndirectedView {
        UndirectedView::new(self)
    }
}

/// Direction in which messages flow along a schema edge type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Child rows send to the parent they reference.
    ToParent,
    /// Parent rows send to the children referencing them.
    ToChild,
}

/// One directed relation of the undirected view: an edge type plus a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Relation {
    pub edge_type: usize,
    pub direction: Direction,
    pub receiver: usize,
    pub sender: usize,
}

/// Relations in canonical order: for each edge type, `ToParent` then `ToChild`.
pub fn relations(edge_types: &[EdgeType]) -> Vec<Relation> {
    edge_types
        .iter()
        .enumerate()
        .flat_map(|(e, et)| {
            [
                Relation {
                    edge_type: e,
                    direction: Direction::ToParent,
                    receiver: et.parent,
                    sender: et.child,
                },
                Relation {
                    edge_type: e,
                    direction: Direction::ToChild,
                    receiver: et.child,
                    sender: et.parent,
                },
            ]
        })
        .collect()
}

/// Compressed neighbor lists indexed by receiver node; senders sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Csr {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Csr {
    pub fn from_pairs(receivers: usize, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        let mut offsets = vec![0; receivers + 1];
        for &(r, _) in &pairs {
            offsets[r + 1] += 1;
        }
        for i in 0..receivers {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            targets: pairs.into_iter().map(|(_, s)| s).collect(),
        }
    }

    pub fn neighbors(&self, receiver: usize) -> &[usize] {
        &self.targets[self.offsets[receiver]..self.offsets[receiver + 1]]
    }

    pub fn receivers(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// The graph with reverse edges added, as used by the denoiser.
#[derive(Debug, Clone)]
pub struct UndirectedView {
    pub relations: Vec<Relation>,
    pub adjacency: Vec<Csr>,
}

impl UndirectedView {
    fn new(g: &HeteroGraph) -> Self {
        let relations = relations(&g.edge_types);
        let adjacency = relations
            .iter()
            .map(|r| {
                let pairs: Vec<(usize, usize)> = match r.direction {
                    Direction::ToParent => g.edges[r.edge_type].iter().map(|&(c, p)| (p, c)).collect(),
                    Direction::ToChild => g.edges[r.edge_type].clone(),
                };
                Csr::from_pairs(g.node_counts[r.receiver], pairs)
            })
            .collect();
        Self {
            relations,
            adjacency,
        }
    }

    pub fn neighbors(&self, relation: usize, node: usize) -> &[usize] {
        self.adjacency[relation].neighbors(node)
    }
}

pub fn rdb_to_graph(db: &Database) -> HeteroGraph {
    let schema = db.schema();
    let counts = db.tables().iter().map(Table::len).collect();
    let edges = db
        .link_targets()
        .into_iter()
        .map(|targets| targets.into_iter().enumerate().collect())
        .collect();
    let attributes = db
        .tables()
        .iter()
        .map(|t| t.rows.iter().map(|r| r.attributes.clone()).collect())
        .collect();
    HeteroGraph::new(schema, counts, edges, Some(attributes))
        .expect("a valid database maps to a valid graph")
}

/// Rebuilds tables from a graph, assigning keys `1..=n` per type in node order.
pub fn graph_to_rdb(g: &HeteroGraph, schema: &DatabaseSchema) -> Result<Database> {
    if g.node_types.len() != schema.tables().len()
        || g.node_types
            .iter()
            .zip(schema.tables())
            .any(|(n, t)| n != &t.name)
    {
        return Err(Error::Graph("node types do not match schema tables".into()));
    }
    if g.edge_types.len() != schema.links().len()
        || g.edge_types.iter().zip(schema.links()).any(|(e, l)| {
            e.child != l.child || e.parent != l.parent || e.fk_column != l.fk_column
        })
    {
        return Err(Error::Graph("edge types do not match schema links".into()));
    }

    let mut parent_of: Vec<Vec<Option<usize>>> = Vec::with_capacity(g.edge_types.len());
    for (e, et) in g.edge_types.iter().enumerate() {
        let mut targets = vec![None; g.node_counts[et.child]];
        for &(c, p) in &g.edges[e] {
            if targets[c].replace(p).is_some() {
                return Err(Error::Graph(format!(
                    "node {c} of `{}` has several `{}` edges",
                    g.node_types[et.child], et.fk_column
                )));
            }
        }
        if let Some(c) = targets.iter().position(Option::is_none) {
            return Err(Error::Graph(format!(
                "incomplete foreign keys: node {c} of `{}` has no `{}` edge",
                g.node_types[et.child], et.fk_column
            )));
        }
        parent_of.push(targets);
    }

    let mut tables = Vec::with_capacity(g.node_types.len());
    for (ti, ts) in schema.tables().iter().enumerate() {
        let n_attr = ts.attribute_count();
        let attrs = g.attributes.as_ref().map(|a| &a[ti]);
        if attrs.is_none() && n_attr > 0 && g.node_counts[ti] > 0 {
            return Err(Error::Graph(format!(
                "table `{}` has attributes but the graph carries none",
                ts.name
            )));
        }
        let fk_links: Vec<usize> = schema.links_from(ti).map(|(li, _)| li).collect();
        let rows = (0..g.node_counts[ti])
            .map(|v| Row {
                key: (v + 1).to_string(),
                foreign: fk_links
                    .iter()
                    .map(|&li| (parent_of[li][v].unwrap() + 1).to_string())
                    .collect(),
                attributes: attrs.map(|a| a[v].clone()).unwrap_or_default(),
            })
            .collect();
        tables.push(Table { rows });
    }
    Database::new(schema.clone(), tables)
}

/// A K-hop neighborhood around a center node.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub center: NodeRef,
    pub hops: usize,
    /// Included nodes; the center is always first.
    pub nodes: Vec<NodeRef>,
    /// Per edge type, `(child, parent)` pairs of local node positions.
    pub edges: Vec<Vec<(usize, usize)>>,
}

impl Subgraph {
    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }
}

/// Breadth-first K-hop neighborhood over the undirected view.
///
/// Without a neighbor cap the subgraph is induced: it holds every edge among the
/// reached nodes. With a cap, at most `cap` neighbors are sampled uniformly without
/// replacement per (node, relation), and only the sampled edges are kept.
pub fn k_hop_subgraph<R: Rng + ?Sized>(
    g: &HeteroGraph,
    view: &UndirectedView,
    center: NodeRef,
    hops: usize,
    neighbor_cap: Option<usize>,
    rng: &mut R,
) -> Result<Subgraph> {
    if center.node_type >= g.node_types.len() || center.index >= g.node_counts[center.node_type] {
        return Err(Error::Graph(format!("center {center:?} out of range")));
    }
    if neighbor_cap == Some(0) {
        return Err(Error::Graph("neighbor cap must be at least 1".into()));
    }
    let mut local: HashMap<NodeRef, usize> = HashMap::from([(center, 0)]);
    let mut nodes = vec![center];
    let mut sampled_edges: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut frontier = vec![center];
    let mut picked = Vec::new();

    for _ in 0..hops {
        let mut next = Vec::new();
        for &u in &frontier {
            for (ri, rel) in view.relations.iter().enumerate() {
                if rel.receiver != u.node_type {
                    continue;
                }
                let all = view.neighbors(ri, u.index);
                picked.clear();
                match neighbor_cap {
                    Some(cap) if all.len() > cap => {
                        let mut idx = sample(rng, all.len(), cap).into_vec();
                        idx.sort_unstable();
                        picked.extend(idx.into_iter().map(|i| all[i]));
                    }
                    _ => picked.extend_from_slice(all),
                }
                for &w in &picked {
                    let wref = NodeRef::new(rel.sender, w);
                    if !local.contains_key(&wref) {
                        local.insert(wref, nodes.len());
                        nodes.push(wref);
                        next.push(wref);
                    }
                    if neighbor_cap.is_some() {
                        let (c, p) = match rel.direction {
                            Direction::ToParent => (w, u.index),
                            Direction::ToChild => (u.index, w),
                        };
                        sampled_edges.insert((rel.edge_type, c, p));
                    }
                }
            }
        }
        frontier = next;
    }

    let mut edges = vec![Vec::new(); g.edge_types.len()];
    if neighbor_cap.is_some() {
        for (e, c, p) in sampled_edges {
            let et = &g.edge_types[e];
            edges[e].push((
                local[&NodeRef::new(et.child, c)],
                local[&NodeRef::new(et.parent, p)],
            ));
        }
    } else {
        for (pos, &u) in nodes.iter().enumerate() {
            for (ri, rel) in view.relations.iter().enumerate() {
                if rel.direction != Direction::ToChild || rel.receiver != u.node_type {
                    continue;
                }
                for &p in view.neighbors(ri, u.index) {
                    if let Some(&pp) = local.get(&NodeRef::new(rel.sender, p)) {
                        edges[rel.edge_type].push((pos, pp));
                    }
                }
            }
        }
    }
    for list in &mut edges {
        list.sort_unstable();
    }
    Ok(Subgraph {
        center,
        hops,
        nodes,
        edges,
    })
}
