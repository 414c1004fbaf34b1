use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relsynth::codec::{encode_features, fit_codecs};
use relsynth::denoiser::{DenoiserArch, DenoiserParams, MessageGraph};
use relsynth::diffusion::{
    estimate_loss, initial_noise, node_noise, reverse_step, sample_batch, sample_features, train, DiffusionConfig,
    NoisePredictor, NoiseSchedule, TrainingGraph,
};
use relsynth::graph::{rdb_to_graph, NodeRef};
use relsynth::linalg::Matrix;
use relsynth::toy;

struct Zero;

impl NoisePredictor for Zero {
    fn predict(&self, input: &MessageGraph) -> relsynth::Result<Vec<Matrix>> {
        Ok(input
            .features
            .iter()
            .zip(&input.outputs)
            .map(|(m, o)| Matrix::zeros(o.len(), m.cols))
            .collect())
    }
}

fn household_data() -> TrainingGraph {
    let db = toy::household_person(1, 60, &[1, 2, 3]);
    let codecs = fit_codecs(&db).unwrap();
    let feats = encode_features(&db, &codecs).unwrap();
    TrainingGraph::new(rdb_to_graph(&db).without_attributes(), feats).unwrap()
}

fn small_config() -> DiffusionConfig {
    DiffusionConfig {
        timesteps: 100,
        k_hops: 1,
        batch_size: 64,
        train_steps: 5000,
        learning_rate: 1e-3,
        hidden: 16,
        head_layers: vec![32, 32],
        log_every: 500,
        ..DiffusionConfig::default()
    }
}

#[test]
fn zero_predictor_step_is_scaling_plus_noise() {
    let data = household_data();
    let sched = NoiseSchedule::cosine(20).unwrap();
    let dims = data.feature_dims();
    let view = data.graph.undirected();
    let x = initial_noise(&data.graph, &dims, &sched, 4);
    let y = reverse_step(&data.graph, &view, &x, &Zero, &sched, 4).unwrap();
    assert_eq!(y.t, 19);
    let t = 20;
    for (ty, m) in x.features.iter().enumerate() {
        for i in 0..m.rows {
            let z = node_noise(4, NodeRef::new(ty, i), t, m.cols);
            for j in 0..m.cols {
                let expected = m.row(i)[j] / sched.alpha(t).sqrt() + sched.sigma(t) * z[j];
                assert!((y.features[ty].row(i)[j] - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn last_step_adds_no_noise() {
    let data = household_data();
    let sched = NoiseSchedule::cosine(1).unwrap();
    let dims = data.feature_dims();
    let view = data.graph.undirected();
    let x = initial_noise(&data.graph, &dims, &sched, 0);
    let a = reverse_step(&data.graph, &view, &x, &Zero, &sched, 0).unwrap();
    let b = reverse_step(&data.graph, &view, &x, &Zero, &sched, 12345).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.t, 0);
    let scale = 1.0 / sched.alpha(1).sqrt();
    assert_eq!(a.features[0].row(0)[0], x.features[0].row(0)[0] * scale);
}

#[test]
fn perfect_predictor_has_zero_loss() {
    let data = household_data();
    let sched = NoiseSchedule::cosine(50).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_batch(&data, &small_config(), &sched, 128, &mut r).unwrap();
    assert_eq!(relsynth::diffusion::simple_loss(&batch.targets, &batch.targets), 0.0);
    assert_eq!(batch.timesteps.len(), 128);
    assert!(batch.timesteps.iter().all(|&t| (1..=50).contains(&t)));
    assert_eq!(batch.input.outputs.iter().map(Vec::len).sum::<usize>(), 128);
}

#[test]
fn loss_estimates_agree_and_training_beats_zero_baseline() {
    let data = household_data();
    let cfg = small_config();
    let sched = NoiseSchedule::cosine(cfg.timesteps).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(2);

    // Two independent estimates of the zero-predictor loss agree within 3 sigma.
    let n = 20_000.0;
    let a = estimate_loss(&Zero, &data, &cfg, &sched, 20, 1000, &mut r).unwrap();
    let b = estimate_loss(&Zero, &data, &cfg, &sched, 20, 1000, &mut r).unwrap();
    let sigma = (2.0 * 2.0 / n as f64).sqrt() * 2f64.sqrt();
    assert!((a - b).abs() < 3.0 * sigma, "{a} vs {b}");

    let arch = DenoiserArch::for_graph(&data.graph, data.feature_dims(), cfg.hidden, cfg.k_hops, cfg.head_layers.clone());
    let params = DenoiserParams::init(arch, 3);
    let (trained, curve) = train(&data, params, &cfg, &sched, 3).unwrap();
    assert_eq!(curve.first().unwrap().0, 0);
    assert_eq!(curve.last().unwrap().0, cfg.train_steps - 1);
    let held_out = estimate_loss(&trained, &data, &cfg, &sched, 5, 1000, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    assert!(held_out < 2.0, "held-out loss {held_out} not below the zero baseline 2");
}

#[test]
fn sampling_is_deterministic_and_shaped() {
    let data = household_data();
    let mut cfg = small_config();
    cfg.train_steps = 50;
    let sched = NoiseSchedule::cosine(cfg.timesteps).unwrap();
    let arch = DenoiserArch::for_graph(&data.graph, data.feature_dims(), cfg.hidden, 1, cfg.head_layers.clone());
    let (params, _) = train(&data, DenoiserParams::init(arch, 1), &cfg, &sched, 1).unwrap();
    let a = sample_features(&data.graph, &params, &data.feature_dims(), &cfg, &sched, 5).unwrap();
    let b = sample_features(&data.graph, &params, &data.feature_dims(), &cfg, &sched, 5).unwrap();
    assert_eq!(a, b);
    for (m, (&n, &d)) in a.iter().zip(data.graph.node_counts().iter().zip(&data.feature_dims())) {
        assert_eq!((m.rows, m.cols), (n, d));
        assert!(m.is_finite());
    }

    // A neighbor cap routes sampling through per-node subgraphs; still deterministic.
    cfg.neighbor_cap = Some(1);
    let c = sample_features(&data.graph, &params, &data.feature_dims(), &cfg, &sched, 5).unwrap();
    let d = sample_features(&data.graph, &params, &data.feature_dims(), &cfg, &sched, 5).unwrap();
    assert_eq!(c, d);
}

#[test]
fn k0_training_sees_single_node_subgraphs() {
    let data = household_data();
    let cfg = DiffusionConfig {
        k_hops: 0,
        ..small_config()
    };
    let sched = NoiseSchedule::cosine(10).unwrap();
    let batch = sample_batch(&data, &cfg, &sched, 32, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(batch.input.features.iter().map(|m| m.rows).sum::<usize>(), 32);
    assert!(batch.input.adjacency.iter().all(|a| a.targets.is_empty()));
}
