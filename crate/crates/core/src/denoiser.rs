//! The noise predictor: a heterogeneous message-passing network over a node's
//! K-hop neighborhood, followed by a per-type MLP head.
//!
//! Layer 0 embeds every node: `h0 = W_in·x + b_in + temb(t)` for tables with
//! attributes, a learned constant for attribute-free tables. Each of the K
//! message-passing layers computes, per node type,
//!
//! ```text
//! h' = relu(W_self·h + b + Σ_relations W_rel · Σ_{w ∈ N_rel(v)} h_w)
//! ```
//!
//! where every schema edge type contributes two relations (toward the parent and
//! toward the child). The head maps the final embedding to the table's attribute
//! dimension. Parameters live in one flat vector; gradients are computed by
//! hand-written reverse-mode differentiation over the same layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{relations, Csr, Direction, HeteroGraph, Subgraph};
use crate::linalg::{
    add_column_sums, add_matmul, add_matmul_transposed, add_outer, affine, relu_backward,
    relu_in_place, transpose, Matrix,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub edge_type: usize,
    pub to_parent: bool,
    pub receiver: usize,
    pub sender: usize,
}

pub fn relation_specs(g: &HeteroGraph) -> Vec<RelationSpec> {
    relations(g.edge_types())
        .into_iter()
        .map(|r| RelationSpec {
            edge_type: r.edge_type,
            to_parent: r.direction == Direction::ToParent,
            receiver: r.receiver,
            sender: r.sender,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub node_types: Vec<String>,
    /// Encoded attribute dimension per node type.
    pub feature_dims: Vec<usize>,
    pub relations: Vec<RelationSpec>,
    pub hidden: usize,
    /// Message-passing layers; equals the hop count K.
    pub layers: usize,
    /// Hidden widths of the per-type MLP head.
    pub head: Vec<usize>,
}

impl DenoiserArch {
    pub fn for_graph(
        g: &HeteroGraph,
        feature_dims: Vec<usize>,
        hidden: usize,
        layers: usize,
        head: Vec<usize>,
    ) -> Self {
        Self {
            node_types: g.node_types().to_vec(),
            feature_dims,
            relations: relation_specs(g),
            hidden,
            layers,
            head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    weight: usize,
    bias: Option<usize>,
    fan_in: usize,
    fan_out: usize,
}

impl Dense {
    fn w<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.weight..self.weight + self.fan_in * self.fan_out]
    }

    fn b<'a>(&self, p: &'a [f64]) -> Option<&'a [f64]> {
        self.bias.map(|o| &p[o..o + self.fan_out])
    }

    fn apply(&self, p: &[f64], x: &Matrix) -> Matrix {
        affine(x, self.w(p), self.b(p), self.fan_out)
    }

    /// Accumulates weight/bias gradients and, if requested, `dx += dy · Wᵀ`.
    fn backward(&self, p: &[f64], x: &Matrix, dy: &Matrix, grad: &mut [f64], dx: Option<&mut Matrix>) {
        add_outer(x, dy, &mut grad[self.weight..self.weight + self.fan_in * self.fan_out]);
        if let Some(o) = self.bias {
            add_column_sums(dy, &mut grad[o..o + self.fan_out]);
        }
        if let Some(dx) = dx {
            let wt = transpose(self.w(p), self.fan_in, self.fan_out);
            add_matmul_transposed(dy, &wt, dx);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    update: Vec<Dense>,
    relation: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    input: Vec<Option<Dense>>,
    constant: Vec<Option<usize>>,
    time: [Dense; 2],
    layers: Vec<LayerLayout>,
    heads: Vec<Option<Vec<Dense>>>,
    /// Dense blocks in allocation order, for initialization.
    blocks: Vec<Dense>,
    constants: Vec<usize>,
    total: usize,
}

struct Allocator {
    next: usize,
    blocks: Vec<Dense>,
}

impl Allocator {
    fn dense(&mut self, fan_in: usize, fan_out: usize, bias: bool) -> Dense {
        let weight = self.next;
        self.next += fan_in * fan_out;
        let bias = bias.then(|| {
            let o = self.next;
            self.next += fan_out;
            o
        });
        let d = Dense {
            weight,
            bias,
            fan_in,
            fan_out,
        };
        self.blocks.push(d);
        d
    }

    fn vector(&mut self, len: usize) -> usize {
        let o = self.next;
        self.next += len;
        o
    }
}

impl Layout {
    fn new(arch: &DenoiserArch) -> Self {
        let h = arch.hidden;
        let mut a = Allocator {
            next: 0,
            blocks: Vec::new(),
        };
        let mut constants = Vec::new();
        let mut input = Vec::new();
        let mut constant = Vec::new();
        for &d in &arch.feature_dims {
            if d > 0 {
                input.push(Some(a.dense(d, h, true)));
                constant.push(None);
            } else {
                input.push(None);
                let o = a.vector(h);
                constants.push(o);
                constant.push(Some(o));
            }
        }
        let time = [a.dense(h, h, true), a.dense(h, h, true)];
        let layers = (0..arch.layers)
            .map(|_| LayerLayout {
                update: arch.feature_dims.iter().map(|_| a.dense(h, h, true)).collect(),
                relation: arch.relations.iter().map(|_| a.dense(h, h, false)).collect(),
            })
            .collect();
        let heads = arch
            .feature_dims
            .iter()
            .map(|&d| {
                (d > 0).then(|| {
                    let mut width = h;
                    let mut stack = Vec::new();
                    for &w in &arch.head {
                        stack.push(a.dense(width, w, true));
                        width = w;
                    }
                    stack.push(a.dense(width, d, true));
                    stack
                })
            })
            .collect();
        Self {
            input,
            constant,
            time,
            layers,
            heads,
            blocks: a.blocks,
            constants,
            total: a.next,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    arch: DenoiserArch,
    layout: Layout,
    pub values: Vec<f64>,
}

impl DenoiserParams {
    /// Fan-in scaled uniform initialization, deterministic in `seed`.
    pub fn init(arch: DenoiserArch, seed: u64) -> Self {
        let layout = Layout::new(&arch);
        let mut values = vec![0.0; layout.total];
        let mut r = rng::stream(seed, "denoiser-init");
        for d in &layout.blocks {
            let bound = 1.0 / (d.fan_in as f64).sqrt();
            for v in &mut values[d.weight..d.weight + d.fan_in * d.fan_out] {
                *v = r.random_range(-bound..bound);
            }
            if let Some(o) = d.bias {
                for v in &mut values[o..o + d.fan_out] {
                    *v = r.random_range(-bound..bound);
                }
            }
        }
        for &o in &layout.constants {
            for v in &mut values[o..o + arch.hidden] {
                *v = r.random_range(-1.0..1.0);
            }
        }
        Self {
            arch,
            layout,
            values,
        }
    }

    pub fn from_values(arch: DenoiserArch, values: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&arch);
        if values.len() != layout.total {
            return Err(Error::Model(format!(
                "expected {} parameters, got {}",
                layout.total,
                values.len()
            )));
        }
        Ok(Self {
            arch,
            layout,
            values,
        })
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.layout.layers.len()
    }

    /// Output width of the head for `node_type`, if it has one.
    pub fn head_output_dim(&self, node_type: usize) -> Option<usize> {
        self.layout.heads[node_type]
            .as_ref()
            .map(|s| s.last().unwrap().fan_out)
    }

    /// Parameter index range of the head for `node_type`.
    pub fn head_range(&self, node_type: usize) -> Option<std::ops::Range<usize>> {
        self.layout.heads[node_type].as_ref().map(|s| {
            let first = s[0].weight;
            let last = s.last().unwrap();
            first..last.bias.map_or(last.weight + last.fan_in * last.fan_out, |b| b + last.fan_out)
        })
    }
}

/// Denoiser input: noisy node features plus the relation adjacency among them.
///
/// Nodes are grouped by type; each node belongs to a group that fixes its
/// diffusion timestep (one group per subgraph in a training batch).
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    pub features: Vec<Matrix>,
    pub groups: Vec<Vec<usize>>,
    pub times: Vec<usize>,
    pub adjacency: Vec<Csr>,
    /// Per type, node positions whose noise is predicted.
    pub outputs: Vec<Vec<usize>>,
}

impl MessageGraph {
    /// Whole-graph input with every node at timestep `t`.
    pub fn full(adjacency: &[Csr], features: Vec<Matrix>, t: usize) -> Self {
        let groups = features.iter().map(|m| vec![0; m.rows]).collect();
        let outputs = features
            .iter()
            .map(|m| if m.cols > 0 { (0..m.rows).collect() } else { Vec::new() })
            .collect();
        Self {
            features,
            groups,
            times: vec![t],
            adjacency: adjacency.to_vec(),
            outputs,
        }
    }

    /// Disjoint union of subgraphs; the center of each is an output.
    ///
    /// `features[s][i]` is the noisy feature vector of node `i` of subgraph `s`.
    pub fn from_subgraphs(
        relations: &[RelationSpec],
        feature_dims: &[usize],
        samples: &[(&Subgraph, &[Vec<f64>], usize)],
    ) -> Self {
        let n_types = feature_dims.len();
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n_types];
        let mut counts = vec![0usize; n_types];
        let mut groups = vec![Vec::new(); n_types];
        let mut outputs = vec![Vec::new(); n_types];
        let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); relations.len()];
        let mut times = Vec::with_capacity(samples.len());

        for (s, &(sub, feats, t)) in samples.iter().enumerate() {
            times.push(t);
            // Positions follow original node order within each type so neighbor
            // sums run in the same order as on the full graph.
            let mut order: Vec<usize> = (0..sub.nodes.len()).collect();
            order.sort_by_key(|&i| sub.nodes[i]);
            let mut pos = vec![0usize; sub.nodes.len()];
            for &i in &order {
                let ty = sub.nodes[i].node_type;
                pos[i] = counts[ty];
                counts[ty] += 1;
                rows[ty].extend_from_slice(&feats[i]);
                groups[ty].push(s);
            }
            outputs[sub.center.node_type].push(pos[0]);
            for (ri, rel) in relations.iter().enumerate() {
                for &(c, p) in &sub.edges[rel.edge_type] {
                    pairs[ri].push(if rel.to_parent { (pos[p], pos[c]) } else { (pos[c], pos[p]) });
                }
            }
        }
        let adjacency = relations
            .iter()
            .zip(pairs)
            .map(|(rel, p)| Csr::from_pairs(counts[rel.receiver], p))
            .collect();
        let features = rows
            .into_iter()
            .zip(feature_dims)
            .zip(&counts)
            .map(|((data, &d), &n)| Matrix::from_vec(n, d, data))
            .collect();
        Self {
            features,
            groups,
            times,
            adjacency,
            outputs,
        }
    }

    fn validate(&self, arch: &DenoiserArch) -> Result<()> {
        if self.features.len() != arch.feature_dims.len() || self.adjacency.len() != arch.relations.len() {
            return Err(Error::Model("message graph does not match the denoiser's types".into()));
        }
        for (m, &d) in self.features.iter().zip(&arch.feature_dims) {
            if m.cols != d {
                return Err(Error::Model(format!("feature width {} != {d}", m.cols)));
            }
            if !m.is_finite() {
                return Err(Error::Numeric("non-finite denoiser input".into()));
            }
        }
        for (csr, rel) in self.adjacency.iter().zip(&arch.relations) {
            if csr.receivers() != self.features[rel.receiver].rows {
                return Err(Error::Model("adjacency receiver count mismatch".into()));
            }
            if csr.targets.iter().any(|&s| s >= self.features[rel.sender].rows) {
                return Err(Error::Model("adjacency sender out of range".into()));
            }
        }
        Ok(())
    }
}

/// Transformer-style sinusoidal embedding of a timestep.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.cos();
        out[half + i] = arg.sin();
    }
    out
}

fn aggregate(h_sender: &Matrix, csr: &Csr) -> Matrix {
    let mut out = Matrix::zeros(csr.receivers(), h_sender.cols);
    for r in 0..csr.receivers() {
        let row = out.row_mut(r);
        for &s in csr.neighbors(r) {
            for (o, &v) in row.iter_mut().zip(h_sender.row(s)) {
                *o += v;
            }
        }
    }
    out
}

/// Cached activations of one forward pass.
pub struct Forward {
    sinusoid: Matrix,
    time_pre: Matrix,
    time_hidden: Matrix,
    h: Vec<Vec<Matrix>>,
    pre: Vec<Vec<Matrix>>,
    agg: Vec<Vec<Matrix>>,
    head_inputs: Vec<Vec<Matrix>>,
    head_pre: Vec<Vec<Matrix>>,
    /// Predicted noise per type, rows in `MessageGraph::outputs` order.
    pub out: Vec<Matrix>,
}

pub fn forward(params: &DenoiserParams, mg: &MessageGraph) -> Result<Forward> {
    let arch = &params.arch;
    let lay = &params.layout;
    let p = &params.values[..];
    let hdim = arch.hidden;
    mg.validate(arch)?;

    let sinusoid = Matrix::from_rows(hdim, &mg.times.iter().map(|&t| timestep_embedding(t, hdim)).collect::<Vec<_>>());
    let time_pre = lay.time[0].apply(p, &sinusoid);
    let mut time_hidden = time_pre.clone();
    relu_in_place(&mut time_hidden);
    let temb = lay.time[1].apply(p, &time_hidden);

    let n_types = arch.feature_dims.len();
    let mut h0 = Vec::with_capacity(n_types);
    for ty in 0..n_types {
        let n = mg.features[ty].rows;
        let m = match (&lay.input[ty], lay.constant[ty]) {
            (Some(dense), _) => {
                let mut m = dense.apply(p, &mg.features[ty]);
                for i in 0..n {
                    let g = mg.groups[ty][i];
                    for (o, &e) in m.row_mut(i).iter_mut().zip(temb.row(g)) {
                        *o += e;
                    }
                }
                m
            }
            (None, Some(o)) => {
                let mut m = Matrix::zeros(n, hdim);
                for i in 0..n {
                    m.row_mut(i).copy_from_slice(&p[o..o + hdim]);
                }
                m
            }
            (None, None) => unreachable!("every type has an input or a constant"),
        };
        h0.push(m);
    }

    let mut h = vec![h0];
    let mut pre_all = Vec::with_capacity(lay.layers.len());
    let mut agg_all = Vec::with_capacity(lay.layers.len());
    for layer in &lay.layers {
        let cur = h.last().unwrap();
        let aggs: Vec<Matrix> = arch
            .relations
            .iter()
            .zip(&mg.adjacency)
            .map(|(rel, csr)| aggregate(&cur[rel.sender], csr))
            .collect();
        let mut pres = Vec::with_capacity(n_types);
        let mut next = Vec::with_capacity(n_types);
        for ty in 0..n_types {
            let mut pre = layer.update[ty].apply(p, &cur[ty]);
            for (ri, rel) in arch.relations.iter().enumerate() {
                if rel.receiver == ty {
                    add_matmul(&aggs[ri], layer.relation[ri].w(p), &mut pre);
                }
            }
            let mut act = pre.clone();
            relu_in_place(&mut act);
            pres.push(pre);
            next.push(act);
        }
        pre_all.push(pres);
        agg_all.push(aggs);
        h.push(next);
    }

    let last = h.last().unwrap();
    let mut head_inputs = Vec::with_capacity(n_types);
    let mut head_pre = Vec::with_capacity(n_types);
    let mut out = Vec::with_capacity(n_types);
    for ty in 0..n_types {
        let Some(stack) = &lay.heads[ty] else {
            head_inputs.push(Vec::new());
            head_pre.push(Vec::new());
            out.push(Matrix::zeros(0, 0));
            continue;
        };
        let mut x = last[ty].gather(&mg.outputs[ty]);
        let mut inputs = Vec::with_capacity(stack.len());
        let mut pres = Vec::with_capacity(stack.len());
        for (i, dense) in stack.iter().enumerate() {
            let y = dense.apply(p, &x);
            inputs.push(x);
            if i + 1 < stack.len() {
                let mut a = y.clone();
                relu_in_place(&mut a);
                pres.push(y);
                x = a;
            } else {
                x = y;
            }
        }
        head_inputs.push(inputs);
        head_pre.push(pres);
        out.push(x);
    }

    Ok(Forward {
        sinusoid,
        time_pre,
        time_hidden,
        h,
        pre: pre_all,
        agg: agg_all,
        head_inputs,
        head_pre,
        out,
    })
}

/// Gradient of `Σ ⟨d_out, out⟩` with respect to all parameters.
pub fn backward(params: &DenoiserParams, mg: &MessageGraph, fwd: &Forward, d_out: &[Matrix]) -> Vec<f64> {
    let arch = &params.arch;
    let lay = &params.layout;
    let p = &params.values[..];
    let n_types = arch.feature_dims.len();
    let hdim = arch.hidden;
    let mut grad = vec![0.0; p.len()];

    let n_layers = lay.layers.len();
    let mut dh: Vec<Matrix> = (0..n_types)
        .map(|ty| Matrix::zeros(fwd.h[n_layers][ty].rows, hdim))
        .collect();

    for ty in 0..n_types {
        let Some(stack) = &lay.heads[ty] else { continue };
        if mg.outputs[ty].is_empty() {
            continue;
        }
        let mut dy = d_out[ty].clone();
        for i in (0..stack.len()).rev() {
            let x = &fwd.head_inputs[ty][i];
            let mut dx = Matrix::zeros(x.rows, x.cols);
            stack[i].backward(p, x, &dy, &mut grad, Some(&mut dx));
            if i > 0 {
                relu_backward(&fwd.head_pre[ty][i - 1], &mut dx);
            }
            dy = dx;
        }
        for (r, &node) in mg.outputs[ty].iter().enumerate() {
            for (o, &g) in dh[ty].row_mut(node).iter_mut().zip(dy.row(r)) {
                *o += g;
            }
        }
    }

    for l in (0..n_layers).rev() {
        let layer = &lay.layers[l];
        let h_prev = &fwd.h[l];
        let mut dprev: Vec<Matrix> = (0..n_types)
            .map(|ty| Matrix::zeros(h_prev[ty].rows, hdim))
            .collect();
        for ty in 0..n_types {
            let mut dpre = std::mem::take(&mut dh[ty]);
            relu_backward(&fwd.pre[l][ty], &mut dpre);
            layer.update[ty].backward(p, &h_prev[ty], &dpre, &mut grad, Some(&mut dprev[ty]));
            for (ri, rel) in arch.relations.iter().enumerate() {
                if rel.receiver != ty {
                    continue;
                }
                let dense = &layer.relation[ri];
                let mut dagg = Matrix::zeros(dpre.rows, hdim);
                dense.backward(p, &fwd.agg[l][ri], &dpre, &mut grad, Some(&mut dagg));
                let csr = &mg.adjacency[ri];
                let target = &mut dprev[rel.sender];
                for r in 0..csr.receivers() {
                    let g = dagg.row(r);
                    for &s in csr.neighbors(r) {
                        for (o, &v) in target.row_mut(s).iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                }
            }
        }
        dh = dprev;
    }

    let mut dtemb = Matrix::zeros(mg.times.len(), hdim);
    for ty in 0..n_types {
        match (&lay.input[ty], lay.constant[ty]) {
            (Some(dense), _) => {
                dense.backward(p, &mg.features[ty], &dh[ty], &mut grad, None);
                for i in 0..dh[ty].rows {
                    let g = mg.groups[ty][i];
                    for (o, &v) in dtemb.row_mut(g).iter_mut().zip(dh[ty].row(i)) {
                        *o += v;
                    }
                }
            }
            (None, Some(o)) => {
                add_column_sums(&dh[ty], &mut grad[o..o + hdim]);
            }
            (None, None) => unreachable!(),
        }
    }
    let mut dhidden = Matrix::zeros(mg.times.len(), hdim);
    lay.time[1].backward(p, &fwd.time_hidden, &dtemb, &mut grad, Some(&mut dhidden));
    relu_backward(&fwd.time_pre, &mut dhidden);
    lay.time[0].backward(p, &fwd.sinusoid, &dhidden, &mut grad, None);
    grad
}

fn single_subgraph_input(params: &DenoiserParams, sub: &Subgraph, features: &[Vec<f64>], t: usize) -> Result<MessageGraph> {
    if features.len() != sub.nodes.len() {
        return Err(Error::Model("one feature vector per subgraph node required".into()));
    }
    if sub.center.node_type >= params.arch.feature_dims.len() {
        return Err(Error::Model(format!("unknown node type {}", sub.center.node_type)));
    }
    if params.arch.feature_dims[sub.center.node_type] == 0 {
        return Err(Error::Model("center node type has no attributes to denoise".into()));
    }
    Ok(MessageGraph::from_subgraphs(
        &params.arch.relations,
        &params.arch.feature_dims,
        &[(sub, features, t)],
    ))
}

/// Predicted noise for the center of `sub`.
pub fn predict_noise(params: &DenoiserParams, sub: &Subgraph, features: &[Vec<f64>], t: usize) -> Result<Vec<f64>> {
    let mg = single_subgraph_input(params, sub, features, t)?;
    let fwd = forward(params, &mg)?;
    Ok(fwd.out[sub.center.node_type].row(0).to_vec())
}

/// Squared error `‖target − ε̂‖²` for the center of `sub` and its gradient.
pub fn gradients(
    params: &DenoiserParams,
    sub: &Subgraph,
    features: &[Vec<f64>],
    t: usize,
    target: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mg = single_subgraph_input(params, sub, features, t)?;
    let fwd = forward(params, &mg)?;
    let ty = sub.center.node_type;
    let pred = fwd.out[ty].row(0);
    if pred.len() != target.len() {
        return Err(Error::Model("target dimension mismatch".into()));
    }
    let loss: f64 = pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
    let d_out: Vec<Matrix> = fwd
        .out
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if i == ty {
                Matrix::from_vec(1, m.cols, pred.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect())
            } else {
                Matrix::zeros(m.rows, m.cols)
            }
        })
        .collect();
    let grad = backward(params, &mg, &fwd, &d_out);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((loss, grad))
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(n: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] *= 1.0 - self.lr * self.weight_decay;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
