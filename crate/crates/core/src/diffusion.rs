//! Gaussian diffusion over graph node features.
//!
//! Every node is noised independently by the forward process. Training draws a
//! center node, its K-hop neighborhood, one timestep for the whole neighborhood
//! and fresh noise for every node in it, then regresses the center's noise.
//! Sampling starts all nodes from N(0, I) and denoises them jointly, one
//! timestep at a time.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{backward, forward, relation_specs, AdamW, DenoiserParams, MessageGraph, RelationSpec};
use crate::error::{Error, Result};
use crate::graph::{k_hop_subgraph, HeteroGraph, NodeRef, Subgraph, UndirectedView};
use crate::linalg::Matrix;
use crate::rng;

/// Variance schedule, indexed by timestep `t ∈ 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    beta_tildes: Vec<f64>,
    sigmas: Vec<f64>,
}

pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

impl NoiseSchedule {
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Model("diffusion needs at least one timestep".into()));
        }
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0);
        let betas: Vec<f64> = (1..=steps)
            .map(|t| (1.0 - (f(t) / f0) / (f(t - 1) / f0)).min(MAX_BETA))
            .collect();
        Ok(Self::from_betas(betas))
    }

    pub fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let beta_tildes: Vec<f64> = (0..betas.len())
            .map(|i| {
                if i == 0 {
                    betas[0]
                } else {
                    (1.0 - alpha_bars[i - 1]) / (1.0 - alpha_bars[i]) * betas[i]
                }
            })
            .collect();
        let sigmas = beta_tildes.iter().map(|b| b.sqrt()).collect();
        Self {
            betas,
            alphas,
            alpha_bars,
            beta_tildes,
            sigmas,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tildes[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Model(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

pub fn make_cosine_schedule(steps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::cosine(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub k_hops: usize,
    pub neighbor_cap: Option<usize>,
    pub batch_size: usize,
    pub train_steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Decay the learning rate linearly to zero over `train_steps`.
    pub lr_anneal: bool,
    pub hidden: usize,
    pub head_layers: Vec<usize>,
    pub log_every: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            timesteps: 2000,
            k_hops: 1,
            neighbor_cap: None,
            batch_size: 1024,
            train_steps: 200_000,
            learning_rate: 6e-4,
            weight_decay: 1e-5,
            lr_anneal: false,
            hidden: 128,
            head_layers: vec![512, 1024, 1024, 1024, 1024, 512],
            log_every: 100,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::Usage("timesteps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be at least 1".into()));
        }
        if self.hidden < 2 {
            return Err(Error::Usage("hidden width must be at least 2".into()));
        }
        if self.neighbor_cap == Some(0) {
            return Err(Error::Usage("neighbor_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_sample(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(t)?;
    if x0.len() != eps.len() {
        return Err(Error::Model(format!(
            "noise dimension {} != feature dimension {}",
            eps.len(),
            x0.len()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Anything that predicts per-node noise from a [`MessageGraph`].
pub trait NoisePredictor {
    fn predict(&self, input: &MessageGraph) -> Result<Vec<Matrix>>;
}

impl NoisePredictor for DenoiserParams {
    fn predict(&self, input: &MessageGraph) -> Result<Vec<Matrix>> {
        Ok(forward(self, input)?.out)
    }
}

/// Encoded training graph with its undirected view.
pub struct TrainingGraph {
    pub graph: HeteroGraph,
    pub view: UndirectedView,
    pub relations: Vec<RelationSpec>,
    pub features: Vec<Matrix>,
    /// Nodes with at least one attribute; training centers are drawn from these.
    pub centers: Vec<NodeRef>,
}

impl TrainingGraph {
    pub fn new(graph: HeteroGraph, features: Vec<Matrix>) -> Result<Self> {
        if features.len() != graph.node_types().len()
            || features
                .iter()
                .zip(graph.node_counts())
                .any(|(m, &n)| m.rows != n)
        {
            return Err(Error::Model("features do not match graph node counts".into()));
        }
        let centers: Vec<NodeRef> = features
            .iter()
            .enumerate()
            .filter(|(_, m)| m.cols > 0)
            .flat_map(|(ty, m)| (0..m.rows).map(move |i| NodeRef::new(ty, i)))
            .collect();
        if centers.is_empty() {
            return Err(Error::Model("no node carries attributes to learn".into()));
        }
        Ok(Self {
            view: graph.undirected(),
            relations: relation_specs(&graph),
            graph,
            features,
            centers,
        })
    }

    pub fn feature_dims(&self) -> Vec<usize> {
        self.features.iter().map(|m| m.cols).collect()
    }
}

/// One noised minibatch: the denoiser input and, per type, the center noise.
pub struct Batch {
    pub input: MessageGraph,
    pub targets: Vec<Matrix>,
    pub timesteps: Vec<usize>,
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn sample_batch<R: Rng + ?Sized>(
    data: &TrainingGraph,
    cfg: &DiffusionConfig,
    sched: &NoiseSchedule,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    let dims = data.feature_dims();
    let mut subs: Vec<Subgraph> = Vec::with_capacity(batch_size);
    let mut noisy: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch_size);
    let mut timesteps = Vec::with_capacity(batch_size);
    let mut target_rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); dims.len()];
    for _ in 0..batch_size {
        let center = data.centers[rng.random_range(0..data.centers.len())];
        let sub = k_hop_subgraph(&data.graph, &data.view, center, cfg.k_hops, cfg.neighbor_cap, rng)?;
        let t = rng.random_range(1..=sched.steps());
        let mut feats = Vec::with_capacity(sub.nodes.len());
        for (i, n) in sub.nodes.iter().enumerate() {
            let eps = normal_vec(rng, dims[n.node_type]);
            feats.push(forward_sample(data.features[n.node_type].row(n.index), t, &eps, sched)?);
            if i == 0 {
                target_rows[n.node_type].push(eps);
            }
        }
        subs.push(sub);
        noisy.push(feats);
        timesteps.push(t);
    }
    let samples: Vec<(&Subgraph, &[Vec<f64>], usize)> = subs
        .iter()
        .zip(&noisy)
        .zip(&timesteps)
        .map(|((s, f), &t)| (s, f.as_slice(), t))
        .collect();
    let input = MessageGraph::from_subgraphs(&data.relations, &dims, &samples);
    let targets = target_rows
        .iter()
        .zip(&dims)
        .map(|(rows, &d)| Matrix::from_rows(d, rows))
        .collect();
    Ok(Batch {
        input,
        targets,
        timesteps,
    })
}

/// Mean over batch elements of `‖ε − ε̂‖²`.
pub fn simple_loss(predicted: &[Matrix], targets: &[Matrix]) -> f64 {
    let n: usize = targets.iter().map(|m| m.rows).sum();
    let total: f64 = predicted
        .iter()
        .zip(targets)
        .filter(|(_, t)| t.rows > 0)
        .map(|(p, t)| p.data.iter().zip(&t.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    total / n.max(1) as f64
}

/// Monte-Carlo estimate of the training objective over `batches × batch_size` draws.
pub fn estimate_loss<P: NoisePredictor, R: Rng + ?Sized>(
    predictor: &P,
    data: &TrainingGraph,
    cfg: &DiffusionConfig,
    sched: &NoiseSchedule,
    batches: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..batches {
        let batch = sample_batch(data, cfg, sched, batch_size, rng)?;
        total += simple_loss(&predictor.predict(&batch.input)?, &batch.targets);
    }
    Ok(total / batches as f64)
}

pub struct Trainer {
    pub params: DenoiserParams,
    optimizer: AdamW,
    rng: rand_chacha::ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(params: DenoiserParams, cfg: &DiffusionConfig, seed: u64) -> Self {
        let optimizer = AdamW::new(params.len(), cfg.learning_rate, cfg.weight_decay);
        Self {
            params,
            optimizer,
            rng: rng::stream(seed, "training"),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One optimizer step on a fresh minibatch; returns the batch loss.
    pub fn training_step(&mut self, data: &TrainingGraph, cfg: &DiffusionConfig, sched: &NoiseSchedule) -> Result<f64> {
        let batch = sample_batch(data, cfg, sched, cfg.batch_size, &mut self.rng)?;
        let fwd = forward(&self.params, &batch.input)?;
        let loss = simple_loss(&fwd.out, &batch.targets);
        let n = cfg.batch_size as f64;
        let d_out: Vec<Matrix> = fwd
            .out
            .iter()
            .zip(&batch.targets)
            .map(|(p, t)| {
                Matrix::from_vec(
                    p.rows,
                    p.cols,
                    p.data.iter().zip(&t.data).map(|(a, b)| 2.0 * (a - b) / n).collect(),
                )
            })
            .collect();
        let grad = backward(&self.params, &batch.input, &fwd, &d_out);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            let param_norm = self.params.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (tmin, tmax) = batch
                .timesteps
                .iter()
                .fold((usize::MAX, 0), |(lo, hi), &t| (lo.min(t), hi.max(t)));
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}: loss={loss}, t in [{tmin}, {tmax}], parameter norm={param_norm}, gradient norm={grad_norm}",
                self.step
            )));
        }
        if cfg.lr_anneal {
            let frac = self.step as f64 / cfg.train_steps.max(1) as f64;
            self.optimizer.lr = cfg.learning_rate * (1.0 - frac).max(0.0);
        }
        self.optimizer.step(&mut self.params.values, &grad);
        self.step += 1;
        Ok(loss)
    }
}

/// Runs `cfg.train_steps` optimizer steps; returns `(step, loss)` every `log_every` steps.
pub fn train(
    data: &TrainingGraph,
    params: DenoiserParams,
    cfg: &DiffusionConfig,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<(DenoiserParams, Vec<(usize, f64)>)> {
    let mut trainer = Trainer::new(params, cfg, seed);
    let every = cfg.log_every.max(1);
    let mut curve = Vec::new();
    for step in 0..cfg.train_steps {
        let loss = trainer.training_step(data, cfg, sched)?;
        if step % every == 0 || step + 1 == cfg.train_steps {
            log::debug!("step {step} loss {loss:.5}");
            curve.push((step, loss));
        }
    }
    Ok((trainer.params, curve))
}

/// Per-node standard normal draw keyed by `(node type, node, timestep)`.
pub fn node_noise(seed: u64, node: NodeRef, t: usize, dim: usize) -> Vec<f64> {
    let mut r = rng::keyed_stream(seed, &[3, node.node_type as u64, node.index as u64, t as u64]);
    normal_vec(&mut r, dim)
}

/// Node features of a whole graph at one diffusion timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyFeatures {
    pub t: usize,
    pub features: Vec<Matrix>,
}

fn apply_update(
    x: &NoisyFeatures,
    eps: &[Matrix],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<NoisyFeatures> {
    let t = x.t;
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let scale = 1.0 / sched.alpha(t).sqrt();
    let sigma = sched.sigma(t);
    let mut out = Vec::with_capacity(x.features.len());
    for (ty, (m, e)) in x.features.iter().zip(eps).enumerate() {
        let mut next = Matrix::zeros(m.rows, m.cols);
        for i in 0..m.rows {
            let z = if t > 1 {
                node_noise(seed, NodeRef::new(ty, i), t, m.cols)
            } else {
                vec![0.0; m.cols]
            };
            for j in 0..m.cols {
                let v = scale * (m.row(i)[j] - coef * e.row(i)[j]) + sigma * z[j];
                next.row_mut(i)[j] = v;
            }
        }
        if !next.is_finite() {
            return Err(Error::Numeric(format!("non-finite features at timestep {t}")));
        }
        out.push(next);
    }
    Ok(NoisyFeatures { t: t - 1, features: out })
}

fn check_features(g: &HeteroGraph, x: &NoisyFeatures, sched: &NoiseSchedule) -> Result<()> {
    sched.check(x.t)?;
    if x.features.len() != g.node_types().len()
        || x.features.iter().zip(g.node_counts()).any(|(m, &n)| m.rows != n)
    {
        return Err(Error::Model("features do not match graph node counts".into()));
    }
    Ok(())
}

/// One joint denoising step over the whole graph, evaluated in a single pass.
///
/// Requires `neighbor_cap` to be unset: every node sees its full K-hop neighborhood,
/// which K rounds of message passing over the whole graph reproduce exactly.
pub fn reverse_step<P: NoisePredictor>(
    g: &HeteroGraph,
    view: &UndirectedView,
    x: &NoisyFeatures,
    predictor: &P,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<NoisyFeatures> {
    check_features(g, x, sched)?;
    let input = MessageGraph::full(&view.adjacency, x.features.clone(), x.t);
    let eps = predictor.predict(&input)?;
    apply_update(x, &eps, sched, seed)
}

/// The same step computed node by node on extracted K-hop subgraphs.
///
/// `order` fixes the evaluation order of nodes; the result must not depend on it.
pub fn reverse_step_per_node<P: NoisePredictor>(
    g: &HeteroGraph,
    view: &UndirectedView,
    x: &NoisyFeatures,
    predictor: &P,
    sched: &NoiseSchedule,
    cfg: &DiffusionConfig,
    seed: u64,
    order: Option<&[NodeRef]>,
) -> Result<NoisyFeatures> {
    check_features(g, x, sched)?;
    let dims: Vec<usize> = x.features.iter().map(|m| m.cols).collect();
    let relations = relation_specs(g);
    let all: Vec<NodeRef> = (0..dims.len())
        .filter(|&ty| dims[ty] > 0)
        .flat_map(|ty| (0..g.node_count(ty)).map(move |i| NodeRef::new(ty, i)))
        .collect();
    let order = order.unwrap_or(&all);
    let mut eps: Vec<Matrix> = dims
        .iter()
        .zip(g.node_counts())
        .map(|(&d, &n)| Matrix::zeros(if d > 0 { n } else { 0 }, d))
        .collect();
    for &v in order {
        let mut r = rng::keyed_stream(seed, &[4, v.node_type as u64, v.index as u64, x.t as u64]);
        let sub = k_hop_subgraph(g, view, v, cfg.k_hops, cfg.neighbor_cap, &mut r)?;
        let feats: Vec<Vec<f64>> = sub
            .nodes
            .iter()
            .map(|n| x.features[n.node_type].row(n.index).to_vec())
            .collect();
        let input = MessageGraph::from_subgraphs(&relations, &dims, &[(&sub, &feats, x.t)]);
        let out = predictor.predict(&input)?;
        eps[v.node_type].row_mut(v.index).copy_from_slice(out[v.node_type].row(0));
    }
    let eps_full: Vec<Matrix> = eps
        .into_iter()
        .zip(&x.features)
        .map(|(e, m)| if e.rows == m.rows { e } else { Matrix::zeros(m.rows, m.cols) })
        .collect();
    apply_update(x, &eps_full, sched, seed)
}

/// Initial state `x^(T) ~ N(0, I)` for every node.
pub fn initial_noise(g: &HeteroGraph, dims: &[usize], sched: &NoiseSchedule, seed: u64) -> NoisyFeatures {
    let t = sched.steps();
    let features = dims
        .iter()
        .enumerate()
        .map(|(ty, &d)| {
            let n = g.node_count(ty);
            let mut m = Matrix::zeros(n, d);
            for i in 0..n {
                m.row_mut(i)
                    .copy_from_slice(&node_noise(seed, NodeRef::new(ty, i), t + 1, d));
            }
            m
        })
        .collect();
    NoisyFeatures { t, features }
}

/// Generates features for every node of a featureless graph.
pub fn sample_features<P: NoisePredictor>(
    g: &HeteroGraph,
    predictor: &P,
    dims: &[usize],
    cfg: &DiffusionConfig,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Matrix>> {
    let view = g.undirected();
    let mut x = initial_noise(g, dims, sched, seed);
    while x.t > 0 {
        x = if cfg.neighbor_cap.is_some() {
            reverse_step_per_node(g, &view, &x, predictor, sched, cfg, seed, None)?
        } else {
            reverse_step(g, &view, &x, predictor, sched, seed)?
        };
    }
    Ok(x.features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_contract() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        assert!(s.alpha_bar(1000) < 1e-4);
        for t in 1..=1000 {
            assert!(s.beta(t) > 0.0 && s.beta(t) <= MAX_BETA);
            if t > 1 {
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() < 1e-10);
            }
            assert!(s.beta_tilde(t) <= s.beta(t) + 1e-15);
            assert!((s.sigma(t).powi(2) - s.beta_tilde(t)).abs() < 1e-12);
        }
        let single = NoiseSchedule::cosine(1).unwrap();
        assert!(single.alpha_bar(1) < 0.01);
        assert!(NoiseSchedule::cosine(0).is_err());
    }

    #[test]
    fn forward_sample_substitution() {
        let s = NoiseSchedule::from_betas(vec![0.75]);
        assert_eq!(forward_sample(&[1.0], 1, &[0.0], &s).unwrap(), vec![0.5]);
        assert!(forward_sample(&[1.0], 1, &[0.0, 1.0], &s).is_err());
        assert!(forward_sample(&[1.0], 2, &[0.0], &s).is_err());
        let tiny = NoiseSchedule::from_betas(vec![1e-12]);
        let y = forward_sample(&[3.0], 1, &[1.0], &tiny).unwrap();
        assert!((y[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn simple_loss_perfect_and_zero() {
        let t = vec![Matrix::from_vec(2, 2, vec![1.0, 2.0, 0.0, -1.0])];
        assert_eq!(simple_loss(&t, &t), 0.0);
        let zero = vec![Matrix::zeros(2, 2)];
        assert_eq!(simple_loss(&zero, &t), 3.0);
    }
}
