//! Run configuration, checkpoints and the train / sample / evaluate commands.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{decode_features, encode_features, fit_codecs, TableCodec};
use crate::denoiser::{DenoiserArch, DenoiserParams};
use crate::diffusion::{sample_features, train, DiffusionConfig, NoiseSchedule, TrainingGraph};
use crate::error::{Error, Result};
use crate::graph::{graph_to_rdb, rdb_to_graph};
use crate::metrics::{self, Breakdown, FidelityReport};
use crate::rng;
use crate::schema::{load_database, load_schema, write_database, Database, DatabaseSchema};
use crate::structure::{fit_degree_model, sample_structure, DegreeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricToggles {
    pub cardinality: bool,
    pub column_shapes: bool,
    pub intra_table_trends: bool,
    pub inter_table_trends: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            cardinality: true,
            column_shapes: true,
            intra_table_trends: true,
            inter_table_trends: true,
        }
    }
}

/// Contents of a JSON run configuration. Relative paths resolve against the
/// directory holding the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: PathBuf,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/model.ckpt`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub metrics: MetricToggles,
}

fn one() -> f64 {
    1.0
}

impl RunConfig {
    pub fn new(schema: impl Into<PathBuf>, data_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            schema: schema.into(),
            data_dir: data_dir.into(),
            output_dir: output_dir.into(),
            checkpoint: None,
            seed: 0,
            scale: 1.0,
            diffusion: DiffusionConfig::default(),
            metrics: MetricToggles::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Usage(format!("invalid config `{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.schema = base.join(&cfg.schema);
        cfg.data_dir = base.join(&cfg.data_dir);
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.checkpoint = cfg.checkpoint.map(|c| base.join(c));
        Ok(cfg)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.ckpt"))
    }

    pub fn synthetic_dir(&self) -> PathBuf {
        self.output_dir.join("synthetic")
    }

    pub fn validate(&self) -> Result<()> {
        if !self.schema.is_file() {
            return Err(Error::Usage(format!("schema file `{}` not found", self.schema.display())));
        }
        if !self.data_dir.is_dir() {
            return Err(Error::Usage(format!("data directory `{}` not found", self.data_dir.display())));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Usage(format!("scale must be positive, got {}", self.scale)));
        }
        self.diffusion.validate()
    }
}

/// Everything needed to generate a database: the fitted structure model, the
/// feature codecs and the trained denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub schema: DatabaseSchema,
    pub codecs: Vec<TableCodec>,
    pub degrees: DegreeModel,
    pub diffusion: DiffusionConfig,
    pub params: DenoiserParams,
}

/// Training outcome: the model and `(step, loss)` samples of the loss curve.
pub struct Fitted {
    pub model: Model,
    pub losses: Vec<(usize, f64)>,
}

/// Fits the structure model and trains the denoiser on `db`.
pub fn fit_model(db: &Database, cfg: &DiffusionConfig, seed: u64) -> Result<Fitted> {
    cfg.validate()?;
    let schema = db.schema().clone();
    let graph = rdb_to_graph(db);
    let degrees = fit_degree_model(&graph, &schema)?;
    let codecs = fit_codecs(db)?;
    let features = encode_features(db, &codecs)?;
    let dims: Vec<usize> = codecs.iter().map(TableCodec::dim).collect();
    let arch = DenoiserArch::for_graph(&graph, dims, cfg.hidden, cfg.k_hops, cfg.head_layers.clone());
    let params = DenoiserParams::init(arch, rng::derive_seed(seed, "init"));
    let data = TrainingGraph::new(graph.without_attributes(), features)?;
    let sched = NoiseSchedule::cosine(cfg.timesteps)?;
    let (params, losses) = train(&data, params, cfg, &sched, rng::derive_seed(seed, "training"))?;
    Ok(Fitted {
        model: Model {
            schema,
            codecs,
            degrees,
            diffusion: cfg.clone(),
            params,
        },
        losses,
    })
}

impl Model {
    /// Samples a structure at `scale`, then its node features, and rebuilds tables.
    pub fn sample(&self, scale: f64, seed: u64) -> Result<Database> {
        let degrees = self.degrees.clone().with_scale(scale);
        let graph = sample_structure(&degrees, &self.schema, rng::derive_seed(seed, "structure"))?;
        let sched = NoiseSchedule::cosine(self.diffusion.timesteps)?;
        let dims: Vec<usize> = self.codecs.iter().map(TableCodec::dim).collect();
        let features = sample_features(
            &graph,
            &self.params,
            &dims,
            &self.diffusion,
            &sched,
            rng::derive_seed(seed, "sampling"),
        )?;
        let attributes = decode_features(&features, &self.codecs)?;
        let graph = graph.with_attributes(attributes)?;
        graph_to_rdb(&graph, &self.schema)
    }
}

const MAGIC: &[u8; 4] = b"RSYN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    schema_hash: String,
    schema: DatabaseSchema,
    codecs: Vec<TableCodec>,
    degrees: DegreeModel,
    diffusion: DiffusionConfig,
    arch: DenoiserArch,
    parameters: usize,
}

/// `RSYN`, format version, JSON header length and header, then parameters as little-endian f64.
pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        schema_hash: model.schema.hash(),
        schema: model.schema.clone(),
        codecs: model.codecs.clone(),
        degrees: model.degrees.clone(),
        diffusion: model.diffusion.clone(),
        arch: model.params.arch().clone(),
        parameters: model.params.len(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * model.params.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in &model.params.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.schema.hash() != header.schema_hash {
        return Err(bad("schema hash does not match the stored schema"));
    }
    let blob = &bytes[16 + len..];
    if blob.len() != 8 * header.parameters {
        return Err(bad("parameter blob has the wrong length"));
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = DenoiserParams::from_values(header.arch, values)?;
    Ok(Model {
        schema: header.schema,
        codecs: header.codecs,
        degrees: header.degrees,
        diffusion: header.diffusion,
        params,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_loss_csv(path: &Path, losses: &[(usize, f64)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "step,loss").unwrap();
    for (s, l) in losses {
        writeln!(out, "{s},{l}").unwrap();
    }
    write_file(path, &String::from_utf8(out).unwrap())
}

/// Trains on the configured database and writes the checkpoint plus `loss.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Model> {
    cfg.validate()?;
    let schema = load_schema(&cfg.schema)?;
    let db = load_database(&schema, &cfg.data_dir)?;
    log::info!("training on {:?}", db.row_counts());
    let fitted = fit_model(&db, &cfg.diffusion, cfg.seed)?;
    save_checkpoint(&fitted.model, cfg.checkpoint_path())?;
    write_loss_csv(&cfg.output_dir.join("loss.csv"), &fitted.losses)?;
    Ok(fitted.model)
}

/// Samples a database from the checkpoint and writes it to `<output_dir>/synthetic`.
pub fn cmd_sample(cfg: &RunConfig) -> Result<Database> {
    if !(cfg.scale.is_finite() && cfg.scale > 0.0) {
        return Err(Error::Usage(format!("scale must be positive, got {}", cfg.scale)));
    }
    let model = load_checkpoint(cfg.checkpoint_path())?;
    if cfg.schema.is_file() {
        let schema = load_schema(&cfg.schema)?;
        if schema.hash() != model.schema.hash() {
            return Err(Error::Checkpoint("checkpoint was trained on a different schema".into()));
        }
    }
    let db = model.sample(cfg.scale, rng::derive_seed(cfg.seed, "sample"))?;
    let dir = cfg.synthetic_dir();
    write_database(&db, &dir)?;
    // Integrity check on what was actually written.
    load_database(&model.schema, &dir)
}

pub fn evaluate_with(real: &Database, synth: &Database, toggles: &MetricToggles) -> Result<FidelityReport> {
    let skip = |on: bool, f: &dyn Fn() -> Result<Breakdown>| if on { f() } else { Ok(Breakdown::default()) };
    let mut inter = std::collections::BTreeMap::new();
    if toggles.inter_table_trends {
        for k in 1..=metrics::max_table_distance(real.schema()) {
            if let Some(b) = metrics::inter_table_trends(real, synth, k)? {
                inter.insert(k, b);
            }
        }
    }
    Ok(FidelityReport {
        cardinality: skip(toggles.cardinality, &|| metrics::cardinality_metric(real, synth))?,
        column_shapes: skip(toggles.column_shapes, &|| metrics::column_shapes(real, synth))?,
        intra_table_trends: skip(toggles.intra_table_trends, &|| metrics::intra_table_trends(real, synth))?,
        inter_table_trends: inter,
    })
}

/// Compares the real database with `<output_dir>/synthetic`; writes `report.json` and `report.txt`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<FidelityReport> {
    let schema = load_schema(&cfg.schema)?;
    let real = load_database(&schema, &cfg.data_dir)?;
    let synth = load_database(&schema, cfg.synthetic_dir())?;
    let report = evaluate_with(&real, &synth, &cfg.metrics)?;
    write_file(&cfg.output_dir.join("report.json"), &report.to_json())?;
    write_file(&cfg.output_dir.join("report.txt"), &report.to_text())?;
    Ok(report)
}

pub fn cmd_end2end(cfg: &RunConfig) -> Result<FidelityReport> {
    cmd_train(cfg)?;
    cmd_sample(cfg)?;
    cmd_evaluate(cfg)
}
