use std::fs;
use std::path::Path;
use std::process::Command;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relsynth::diffusion::DiffusionConfig;
use relsynth::error::Error;
use relsynth::pipeline::{cmd_evaluate, cmd_sample, cmd_train, evaluate_with, fit_model, MetricToggles, RunConfig};
use relsynth::schema::{load_database, load_schema, write_database, Database, Table};
use relsynth::toy;

fn small_diffusion() -> DiffusionConfig {
    DiffusionConfig {
        timesteps: 40,
        batch_size: 32,
        train_steps: 200,
        hidden: 16,
        head_layers: vec![32],
        log_every: 20,
        ..DiffusionConfig::default()
    }
}

fn setup(dir: &Path, db: &Database) -> RunConfig {
    write_database(db, dir.join("data")).unwrap();
    fs::write(dir.join("schema.json"), db.schema().to_json()).unwrap();
    let mut cfg = RunConfig::new(dir.join("schema.json"), dir.join("data"), dir.join("out"));
    cfg.diffusion = small_diffusion();
    cfg
}

fn relsynth(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_relsynth"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn sample_keeps_root_counts_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let db = toy::bank_chain(1, 8, 2, 3);
    let mut cfg = setup(dir.path(), &db);
    cmd_train(&cfg).unwrap();
    let a = cmd_sample(&cfg).unwrap();
    assert_eq!(a.table(0).len(), db.table(0).len());
    let reloaded = load_database(db.schema(), cfg.synthetic_dir()).unwrap();
    assert_eq!(reloaded, a);

    cfg.seed = 1;
    let b = cmd_sample(&cfg).unwrap();
    assert_eq!(a.schema(), b.schema());
    let values = |d: &Database| -> Vec<String> {
        d.tables()
            .iter()
            .flat_map(|t| t.rows.iter().flat_map(|r| r.attributes.iter().map(|v| v.to_string())))
            .collect()
    };
    assert_ne!(values(&a), values(&b));

    cfg.scale = 2.0;
    assert_eq!(cmd_sample(&cfg).unwrap().table(0).len(), 2 * db.table(0).len());
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let dir = tempfile::tempdir().unwrap();
    let db = toy::household_person(0, 40, &[1, 2, 3]);
    let mut cfg = setup(dir.path(), &db);
    cfg.diffusion.train_steps = 2000;
    cfg.diffusion.log_every = 1;
    cfg.seed = 7;
    cmd_train(&cfg).unwrap();
    let first = fs::read(cfg.checkpoint_path()).unwrap();
    cmd_train(&cfg).unwrap();
    assert_eq!(first, fs::read(cfg.checkpoint_path()).unwrap());

    let curve = fs::read_to_string(cfg.output_dir.join("loss.csv")).unwrap();
    let losses: Vec<f64> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 2000);
    let head: f64 = losses[..100].iter().sum::<f64>() / 100.0;
    let tail: f64 = losses[1900..].iter().sum::<f64>() / 100.0;
    assert!(tail < head, "loss did not decrease: {head} -> {tail}");
}

#[test]
fn checkpoint_for_another_schema_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), &toy::household_person(0, 10, &[1, 2]));
    cmd_train(&cfg).unwrap();
    fs::write(&cfg.schema, toy::bank_schema().to_json()).unwrap();
    assert!(matches!(cmd_sample(&cfg), Err(Error::Checkpoint(_))));
}

fn shuffle_attributes(db: &Database, seed: u64) -> Database {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut tables: Vec<Table> = db.tables().to_vec();
    for (t, table) in tables.iter_mut().enumerate() {
        for j in 0..db.schema().table(t).attribute_count() {
            let mut col: Vec<_> = table.rows.iter().map(|row| row.attributes[j].clone()).collect();
            col.shuffle(&mut r);
            for (row, v) in table.rows.iter_mut().zip(col) {
                row.attributes[j] = v;
            }
        }
    }
    Database::new(db.schema().clone(), tables).unwrap()
}

#[test]
fn evaluate_self_and_structure_only_synth() {
    let dir = tempfile::tempdir().unwrap();
    let db = toy::bank_chain(4, 30, 3, 4);
    let cfg = setup(dir.path(), &db);
    write_database(&db, cfg.synthetic_dir()).unwrap();
    let report = cmd_evaluate(&cfg).unwrap();
    assert_eq!(report.cardinality.overall, Some(100.0));
    assert_eq!(report.column_shapes.overall, Some(100.0));
    assert_eq!(report.intra_table_trends.overall, Some(100.0));
    assert_eq!(report.inter_table_trends.len(), 2);
    assert!(report.inter_table_trends.values().all(|b| b.overall == Some(100.0)));

    // Right structure and marginals, but every correlation destroyed.
    let noise = shuffle_attributes(&db, 1);
    let r = evaluate_with(&db, &noise, &MetricToggles::default()).unwrap();
    assert_eq!(r.cardinality.overall, Some(100.0));
    assert_eq!(r.column_shapes.overall, Some(100.0));
    assert!(r.intra_table_trends.overall.unwrap() < 85.0);
    assert!(r.inter_table_trends[&1].overall.unwrap() < 85.0);
    assert!(r.inter_table_trends[&2].overall.unwrap() < 85.0);

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("report.json")).unwrap()).unwrap();
    for key in ["cardinality", "column_shapes", "intra_table_trends"] {
        let b = &json[key];
        assert!(b["overall"].is_f64(), "{key}");
        assert!(b["items"].as_object().unwrap().values().all(|v| (0.0..=100.0).contains(&v.as_f64().unwrap())));
    }
    assert!(json["inter_table_trends"]["1"]["overall"].is_f64());
    assert!(json["inter_table_trends"]["2"]["overall"].is_f64());
    let text = fs::read_to_string(cfg.output_dir.join("report.txt")).unwrap();
    assert!(text.contains("Inter-Table Trends (2-hop)"));
}

#[test]
fn toggled_off_metrics_are_absent() {
    let db = toy::household_person(2, 10, &[1, 2]);
    let toggles = MetricToggles {
        intra_table_trends: false,
        inter_table_trends: false,
        ..MetricToggles::default()
    };
    let r = evaluate_with(&db, &db, &toggles).unwrap();
    assert_eq!(r.intra_table_trends.overall, None);
    assert!(r.inter_table_trends.is_empty());
    assert_eq!(r.cardinality.overall, Some(100.0));
}

#[test]
fn in_memory_model_matches_cli_sampling_path() {
    let db = toy::reviews(3, 8, 6, 30);
    let fitted = fit_model(&db, &small_diffusion(), 5).unwrap();
    let a = fitted.model.sample(1.0, 2).unwrap();
    let b = fitted.model.sample(1.0, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.table(0).len(), 8);
    assert_eq!(a.table(1).len(), 6);
}

#[test]
fn cli_end_to_end_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    let out = relsynth(&["toy", "household", "--out", root, "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Shrink the generated configuration so the test stays fast.
    let cfg_path = dir.path().join("config.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["diffusion"]["timesteps"] = 30.into();
    cfg["diffusion"]["train_steps"] = 50.into();
    cfg["diffusion"]["hidden"] = 8.into();
    cfg["diffusion"]["head_layers"] = serde_json::json!([8]);
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let c = cfg_path.to_str().unwrap();

    let out = relsynth(&["end2end", "--config", c, "--k-hops", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Column Shapes"));
    let out = relsynth(&["sample", "--config", c, "--scale", "0.5", "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let schema = load_schema(dir.path().join("schema.json")).unwrap();
    let synth = load_database(&schema, dir.path().join("out/synthetic")).unwrap();
    assert_eq!(synth.table(0).len(), 100);
    assert!(relsynth(&["evaluate", "--config", c]).status.success());

    assert_eq!(relsynth(&["train", "--config", "/nonexistent/config.json"]).status.code(), Some(1));
    assert_eq!(relsynth(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(relsynth(&["toy", "nope", "--out", root]).status.code(), Some(1));

    // Dangling foreign key: a data error.
    let person = dir.path().join("data/person.csv");
    let text = fs::read_to_string(&person).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let fk = header.iter().position(|h| *h == "household_id").unwrap();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[fk] = "999999".into();
    lines[1] = cells.join(",");
    fs::write(&person, lines.join("\n")).unwrap();
    let out = relsynth(&["train", "--config", c]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("person"));
}

#[test]
fn diverging_training_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), &toy::household_person(0, 10, &[1, 2]));
    cfg.diffusion.learning_rate = 1e300;
    cfg.diffusion.weight_decay = 0.0;
    let err = cmd_train(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(err.to_string().contains("non-finite"), "{err}");
}
