//! Run configuration, the thirteen-model registry, training orchestration
//! and persistence — everything behind the `connector` CLI, callable as a
//! library so the two paths produce identical results.

mod cli;
mod persist;

pub use cli::run_command;
pub use persist::{
    load_checkpoint, load_embeddings, save_checkpoint, save_embeddings,
    save_matrix_embeddings, Checkpoint, TensorData, CHECKPOINT_FORMAT_VERSION,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{self, ClassificationMetrics, LabeledEmbeddingSet};
use crate::gnn::{GnnConfig, GnnModel, GnnTrainer, GnnVariant, GraphOps, NodeSplit};
use crate::graph::KnowledgeGraph;
use crate::kge::{CorruptionMode, KgeConfig, KgeModel, KgeTrainer, KgeVariant};
use crate::linalg::DenseMatrix;
use crate::loaders::{self, DatasetSpec, FileRole, GraphKind};
use crate::logging::warn_log;
use crate::sgns::SgnsConfig;
use crate::walks::WalkConfig;

pub const MODEL_NAMES: [&str; 13] = [
    "deepwalk",
    "node2vec",
    "struc2vec",
    "hope",
    "sine",
    "metapath2vec",
    "transe",
    "transh",
    "transr",
    "gcn",
    "graphsage",
    "gin",
    "gat",
];

/// Parameter schema of one model: key plus default. A `Null` default
/// marks an optional parameter with no value.
fn param_schema(model: &str) -> Option<Vec<(&'static str, Value)>> {
    let walk_common = |dim: u64| -> Vec<(&'static str, Value)> {
        vec![
            ("dim", json!(dim)),
            ("walks_per_node", json!(10)),
            ("walk_length", json!(40)),
            ("window", json!(5)),
            ("negatives", json!(5)),
            ("epochs", json!(5)),
            ("initial_lr", json!(0.025)),
            ("min_lr", json!(0.0001)),
        ]
    };
    let kge_common = || -> Vec<(&'static str, Value)> {
        vec![
            ("dim", json!(50)),
            ("margin", json!(1.0)),
            ("lr", json!(0.01)),
            ("epochs", json!(500)),
            ("batch_size", json!(128)),
            ("corruption", json!("uniform")),
        ]
    };
    let gnn_common = |hidden: u64| -> Vec<(&'static str, Value)> {
        vec![
            ("layers", json!(2)),
            ("hidden_dim", json!(hidden)),
            ("dropout", json!(0.5)),
            ("lr", json!(0.01)),
            ("weight_decay", json!(0.0005)),
            ("epochs", json!(200)),
            ("patience", json!(20)),
            ("train_ratio", json!(0.5)),
            ("valid_ratio", json!(0.25)),
        ]
    };
    let schema = match model {
        "deepwalk" => walk_common(128),
        "node2vec" => {
            let mut s = walk_common(128);
            s.push(("p", json!(1.0)));
            s.push(("q", json!(1.0)));
            s
        }
        "struc2vec" => {
            let mut s = walk_common(128);
            s.push(("k_max", json!(3)));
            s.push(("stay_prob", json!(0.7)));
            s
        }
        "metapath2vec" => {
            let mut s = walk_common(128);
            s.push(("metapath", Value::Null));
            s.push(("hetero_negatives", json!(false)));
            s
        }
        "hope" => vec![("dim", json!(128)), ("beta", Value::Null)],
        "sine" => vec![
            ("dim", json!(64)),
            ("delta", json!(1.0)),
            ("delta0", json!(0.5)),
            ("lambda", json!(0.0001)),
            ("lr", json!(0.01)),
            ("epochs", json!(20)),
            ("symmetrize", json!(true)),
        ],
        "transe" => {
            let mut s = kge_common();
            s.push(("norm", json!("l2")));
            s
        }
        "transh" => kge_common(),
        "transr" => {
            let mut s = kge_common();
            s.push(("rel_dim", json!(50)));
            s
        }
        "gcn" | "graphsage" => gnn_common(16),
        "gin" => {
            let mut s = gnn_common(16);
            s.push(("epsilon", json!(0.0)));
            s.push(("epsilon_learnable", json!(false)));
            s
        }
        "gat" => {
            let mut s = gnn_common(8);
            s.push(("attention_heads", json!(8)));
            s.push(("leaky_slope", json!(0.2)));
            s
        }
        _ => return None,
    };
    Some(schema)
}

/// Fully resolved run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: String,
    pub graph: Option<DatasetSpec>,
    pub params: Map<String, Value>,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn effective_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("model".into(), json!(self.model));
        if let Some(g) = &self.graph {
            let mut go = Map::new();
            go.insert("kind".into(), json!(g.kind.to_string()));
            go.insert("directed".into(), json!(g.directed));
            go.insert("weighted".into(), json!(g.weighted));
            let mut roles: Vec<(&FileRole, &PathBuf)> = g.paths.iter().collect();
            roles.sort_by_key(|(r, _)| **r);
            for (role, path) in roles {
                go.insert(role_name(*role).into(), json!(path.to_string_lossy()));
            }
            obj.insert("graph".into(), Value::Object(go));
        }
        obj.insert("params".into(), Value::Object(self.params.clone()));
        obj.insert("seed".into(), json!(self.seed));
        obj.insert("threads".into(), json!(self.threads));
        obj.insert("deterministic".into(), json!(self.deterministic));
        obj.insert(
            "output_dir".into(),
            json!(self.output_dir.to_string_lossy()),
        );
        Value::Object(obj)
    }
}

fn role_name(role: FileRole) -> &'static str {
    match role {
        FileRole::Edges => "edges",
        FileRole::Nodes => "nodes",
        FileRole::Features => "features",
        FileRole::Labels => "labels",
        FileRole::Train => "train",
        FileRole::Valid => "valid",
        FileRole::Test => "test",
    }
}

const ROLE_KEYS: [(&str, FileRole); 7] = [
    ("edges", FileRole::Edges),
    ("nodes", FileRole::Nodes),
    ("features", FileRole::Features),
    ("labels", FileRole::Labels),
    ("train", FileRole::Train),
    ("valid", FileRole::Valid),
    ("test", FileRole::Test),
];

fn parse_graph_spec(v: &Value) -> Result<DatasetSpec> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::usage("\"graph\" must be an object"))?;
    let mut kind = None;
    let mut directed = false;
    let mut weighted = false;
    let mut paths = std::collections::HashMap::new();
    for (key, val) in obj {
        match key.as_str() {
            "kind" => {
                let s = val
                    .as_str()
                    .ok_or_else(|| Error::usage("graph.kind must be a string"))?;
                kind = Some(match s {
                    "homogeneous" => GraphKind::Homogeneous,
                    "signed" => GraphKind::Signed,
                    "heterogeneous" => GraphKind::Heterogeneous,
                    "knowledge" => GraphKind::Knowledge,
                    other => {
                        return Err(Error::usage(format!(
                            "unknown graph kind {other:?}; expected homogeneous, signed, heterogeneous or knowledge"
                        )))
                    }
                });
            }
            "directed" => {
                directed = val
                    .as_bool()
                    .ok_or_else(|| Error::usage("graph.directed must be a boolean"))?
            }
            "weighted" => {
                weighted = val
                    .as_bool()
                    .ok_or_else(|| Error::usage("graph.weighted must be a boolean"))?
            }
            other => {
                let role = ROLE_KEYS
                    .iter()
                    .find(|(name, _)| *name == other)
                    .map(|(_, role)| *role)
                    .ok_or_else(|| {
                        Error::usage(format!("unknown graph key {other:?}"))
                    })?;
                let s = val
                    .as_str()
                    .ok_or_else(|| Error::usage(format!("graph.{other} must be a path string")))?;
                paths.insert(role, PathBuf::from(s));
            }
        }
    }
    let kind = kind.ok_or_else(|| Error::usage("graph.kind is required"))?;
    let spec = DatasetSpec { kind, paths, directed, weighted };
    spec.validate()?;
    Ok(spec)
}

/// Parse and validate a config document (or a run manifest wrapping one),
/// filling model-specific parameter defaults.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::usage(format!("{}: malformed JSON: {e}", path.display())))?;
    // A manifest embeds the config it was produced from.
    if doc.get("config").is_some() && doc.get("format_version").is_some() {
        doc = doc["config"].take();
    }
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::usage(format!("{}: config must be a JSON object", path.display())))?;

    let mut model = None;
    let mut graph = None;
    let mut params_in = Map::new();
    let mut seed = 42u64;
    let mut threads = 1usize;
    let mut deterministic = false;
    let mut output_dir = PathBuf::from("connector_out");
    for (key, val) in obj {
        match key.as_str() {
            "model" => {
                model = Some(
                    val.as_str()
                        .ok_or_else(|| Error::usage("\"model\" must be a string"))?
                        .to_string(),
                )
            }
            "graph" => graph = Some(parse_graph_spec(val)?),
            "params" => {
                params_in = val
                    .as_object()
                    .ok_or_else(|| Error::usage("\"params\" must be an object"))?
                    .clone()
            }
            "seed" => {
                seed = val
                    .as_u64()
                    .ok_or_else(|| Error::usage("\"seed\" must be a non-negative integer"))?
            }
            "threads" => {
                threads = val
                    .as_u64()
                    .ok_or_else(|| Error::usage("\"threads\" must be a positive integer"))?
                    as usize
            }
            "deterministic" => {
                deterministic = val
                    .as_bool()
                    .ok_or_else(|| Error::usage("\"deterministic\" must be a boolean"))?
            }
            "output_dir" => {
                output_dir = PathBuf::from(
                    val.as_str()
                        .ok_or_else(|| Error::usage("\"output_dir\" must be a string"))?,
                )
            }
            other => return Err(Error::usage(format!("unknown config key {other:?}"))),
        }
    }
    let model = model.ok_or_else(|| Error::usage("config is missing \"model\""))?;
    let schema = param_schema(&model).ok_or_else(|| {
        Error::usage(format!(
            "unknown model {model:?}; valid models: {}",
            MODEL_NAMES.join(", ")
        ))
    })?;
    for key in params_in.keys() {
        if !schema.iter().any(|(k, _)| k == key) {
            return Err(Error::usage(format!(
                "unknown parameter {key:?} for model {model:?}; valid keys: {}",
                schema
                    .iter()
                    .map(|(k, _)| *k)
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
    }
    let mut params = Map::new();
    for (key, default) in &schema {
        let v = params_in.get(*key).cloned().unwrap_or_else(|| default.clone());
        params.insert((*key).to_string(), v);
    }
    Ok(RunConfig { model, graph, params, seed, threads, deterministic, output_dir })
}

pub(crate) fn param_f64(params: &Map<String, Value>, key: &str) -> Result<f64> {
    params
        .get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::usage(format!("parameter {key:?} must be a number")))
}

pub(crate) fn param_usize(params: &Map<String, Value>, key: &str) -> Result<usize> {
    params
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| Error::usage(format!("parameter {key:?} must be a non-negative integer")))
}

pub(crate) fn param_bool(params: &Map<String, Value>, key: &str) -> Result<bool> {
    params
        .get(key)
        .and_then(|v| v.as_bool())
        .ok_or_else(|| Error::usage(format!("parameter {key:?} must be a boolean")))
}

pub(crate) fn param_str<'a>(params: &'a Map<String, Value>, key: &str) -> Result<&'a str> {
    params
        .get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::usage(format!("parameter {key:?} must be a string")))
}

pub(crate) fn walk_config(cfg: &RunConfig) -> Result<WalkConfig> {
    Ok(WalkConfig {
        walks_per_node: param_usize(&cfg.params, "walks_per_node")?,
        walk_length: param_usize(&cfg.params, "walk_length")?,
        p: cfg.params.get("p").and_then(|v| v.as_f64()).unwrap_or(1.0),
        q: cfg.params.get("q").and_then(|v| v.as_f64()).unwrap_or(1.0),
        seed: cfg.seed,
        threads: cfg.effective_threads(),
    })
}

pub(crate) fn sgns_config(cfg: &RunConfig, hetero_negatives: bool) -> Result<SgnsConfig> {
    Ok(SgnsConfig {
        dim: param_usize(&cfg.params, "dim")?,
        window: param_usize(&cfg.params, "window")?,
        negatives: param_usize(&cfg.params, "negatives")?,
        epochs: param_usize(&cfg.params, "epochs")?,
        initial_lr: param_f64(&cfg.params, "initial_lr")?,
        min_lr: param_f64(&cfg.params, "min_lr")?,
        seed: cfg.seed,
        hetero_negatives,
        subsample: None,
        threads: cfg.effective_threads(),
    })
}

pub fn kge_config(model: &str, cfg: &RunConfig) -> Result<KgeConfig> {
    let variant = match model {
        "transe" => match param_str(&cfg.params, "norm")? {
            "l1" => KgeVariant::TransEL1,
            "l2" => KgeVariant::TransEL2,
            other => {
                return Err(Error::usage(format!(
                    "parameter \"norm\" must be \"l1\" or \"l2\", found {other:?}"
                )))
            }
        },
        "transh" => KgeVariant::TransH,
        "transr" => KgeVariant::TransR,
        other => return Err(Error::usage(format!("{other:?} is not a KGE model"))),
    };
    let dim = param_usize(&cfg.params, "dim")?;
    let d_r = if model == "transr" {
        param_usize(&cfg.params, "rel_dim")?
    } else {
        dim
    };
    let corruption = match param_str(&cfg.params, "corruption")? {
        "uniform" => CorruptionMode::Uniform,
        "bernoulli" => CorruptionMode::Bernoulli,
        other => {
            return Err(Error::usage(format!(
                "parameter \"corruption\" must be \"uniform\" or \"bernoulli\", found {other:?}"
            )))
        }
    };
    Ok(KgeConfig {
        variant,
        d_e: dim,
        d_r,
        margin: param_f64(&cfg.params, "margin")?,
        lr: param_f64(&cfg.params, "lr")?,
        epochs: param_usize(&cfg.params, "epochs")?,
        batch_size: param_usize(&cfg.params, "batch_size")?,
        corruption,
        seed: cfg.seed,
    })
}

pub fn gnn_config(model: &str, cfg: &RunConfig) -> Result<GnnConfig> {
    let variant = match model {
        "gcn" => GnnVariant::Gcn,
        "graphsage" => GnnVariant::GraphSage,
        "gin" => GnnVariant::Gin,
        "gat" => GnnVariant::Gat,
        other => return Err(Error::usage(format!("{other:?} is not a GNN model"))),
    };
    let get_or = |key: &str, default: f64| {
        cfg.params.get(key).and_then(|v| v.as_f64()).unwrap_or(default)
    };
    Ok(GnnConfig {
        variant,
        layers: param_usize(&cfg.params, "layers")?,
        hidden_dim: param_usize(&cfg.params, "hidden_dim")?,
        epsilon: get_or("epsilon", 0.0),
        epsilon_learnable: cfg
            .params
            .get("epsilon_learnable")
            .and_then(|v| v.as_bool())
            .unwrap_or(false),
        attention_heads: cfg
            .params
            .get("attention_heads")
            .and_then(|v| v.as_u64())
            .unwrap_or(8) as usize,
        leaky_slope: get_or("leaky_slope", 0.2),
        dropout: param_f64(&cfg.params, "dropout")?,
        lr: param_f64(&cfg.params, "lr")?,
        weight_decay: param_f64(&cfg.params, "weight_decay")?,
        epochs: param_usize(&cfg.params, "epochs")?,
        patience: param_usize(&cfg.params, "patience")?,
        seed: cfg.seed,
    })
}

/// Build a checkpoint from a KGE trainer.
pub fn kge_checkpoint(cfg: &RunConfig, trainer: &KgeTrainer) -> Checkpoint {
    let mut tensors = BTreeMap::new();
    for (name, shape, data) in trainer.model.tensors() {
        tensors.insert(name.to_string(), TensorData::from_slice(shape, data));
    }
    let mut meta = BTreeMap::new();
    meta.insert("num_entities".into(), json!(trainer.model.num_entities()));
    meta.insert("num_relations".into(), json!(trainer.model.num_relations()));
    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: cfg.model.clone(),
        config: cfg.to_json(),
        meta,
        epochs_done: trainer.epochs_done,
        rng_seed: cfg.seed,
        rng_word_pos: trainer.rng_word_pos().to_string(),
        tensors,
    }
}

/// Resume a KGE trainer from a checkpoint against the same dataset.
pub fn resume_kge_trainer(cp: &Checkpoint, kg: &KnowledgeGraph) -> Result<KgeTrainer> {
    if !matches!(cp.model.as_str(), "transe" | "transh" | "transr") {
        return Err(Error::data(format!(
            "checkpoint is for model {:?}, not a KGE model",
            cp.model
        )));
    }
    let run_cfg = run_config_from_snapshot(&cp.config)?;
    if run_cfg.model != cp.model {
        return Err(Error::data("checkpoint model does not match its config snapshot"));
    }
    let kcfg = kge_config(&cp.model, &run_cfg)?;
    let ne = cp.meta_usize("num_entities")?;
    let nr = cp.meta_usize("num_relations")?;
    if ne != kg.num_entities() || nr != kg.num_relations() {
        return Err(Error::data(format!(
            "checkpoint was trained on {ne} entities / {nr} relations, dataset has {} / {}",
            kg.num_entities(),
            kg.num_relations()
        )));
    }
    let tensors: std::collections::HashMap<String, Vec<f64>> = cp
        .tensors
        .iter()
        .map(|(k, t)| (k.clone(), t.data.clone()))
        .collect();
    let model = KgeModel::from_tensors(kcfg.variant, kcfg.d_e, kcfg.d_r, ne, nr, tensors)?;
    KgeTrainer::resume(kg, &kcfg, model, cp.epochs_done, cp.word_pos()?)
}

/// Build a checkpoint from a GNN trainer.
pub fn gnn_checkpoint(cfg: &RunConfig, trainer: &GnnTrainer) -> Checkpoint {
    let mut tensors = BTreeMap::new();
    let (m, v, step) = trainer.adam_state();
    for (i, p) in trainer.model.params.iter().enumerate() {
        tensors.insert(p.name.clone(), TensorData::from_matrix(&p.value));
        tensors.insert(format!("adam_m.{}", p.name), TensorData::from_matrix(&m[i]));
        tensors.insert(format!("adam_v.{}", p.name), TensorData::from_matrix(&v[i]));
    }
    let mut meta = BTreeMap::new();
    meta.insert("in_dim".into(), json!(trainer.model.in_dim));
    meta.insert("num_classes".into(), json!(trainer.model.num_classes));
    meta.insert("adam_step".into(), json!(step));
    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: cfg.model.clone(),
        config: cfg.to_json(),
        meta,
        epochs_done: trainer.epochs_done,
        rng_seed: cfg.seed,
        rng_word_pos: trainer.rng_word_pos().to_string(),
        tensors,
    }
}

/// Resume a GNN trainer from a checkpoint.
pub fn resume_gnn_trainer(cp: &Checkpoint) -> Result<GnnTrainer> {
    if !matches!(cp.model.as_str(), "gcn" | "graphsage" | "gin" | "gat") {
        return Err(Error::data(format!(
            "checkpoint is for model {:?}, not a GNN model",
            cp.model
        )));
    }
    let run_cfg = run_config_from_snapshot(&cp.config)?;
    if run_cfg.model != cp.model {
        return Err(Error::data("checkpoint model does not match its config snapshot"));
    }
    let gcfg = gnn_config(&cp.model, &run_cfg)?;
    let in_dim = cp.meta_usize("in_dim")?;
    let num_classes = cp.meta_usize("num_classes")?;
    let adam_step = cp.meta_usize("adam_step")? as u64;
    // Rebuild the architecture for shapes, then substitute stored values.
    let mut rng = rand::SeedableRng::seed_from_u64(cp.rng_seed);
    let mut model = GnnModel::init(&gcfg, in_dim, num_classes, &mut rng);
    let mut adam_m = Vec::with_capacity(model.params.len());
    let mut adam_v = Vec::with_capacity(model.params.len());
    for p in &mut model.params {
        let take = |prefix: &str| -> Result<DenseMatrix> {
            let t = cp.tensors.get(&format!("{prefix}{}", p.name)).ok_or_else(|| {
                Error::data(format!("checkpoint missing tensor {:?}", p.name))
            })?;
            let m = t.to_matrix()?;
            if (m.rows(), m.cols()) != (p.value.rows(), p.value.cols()) {
                return Err(Error::data(format!(
                    "tensor {:?} has shape {}x{}, model expects {}x{}",
                    p.name,
                    m.rows(),
                    m.cols(),
                    p.value.rows(),
                    p.value.cols()
                )));
            }
            Ok(m)
        };
        let value = take("")?;
        adam_m.push(take("adam_m.")?);
        adam_v.push(take("adam_v.")?);
        p.value = value;
    }
    GnnTrainer::resume(
        &gcfg,
        model,
        adam_m,
        adam_v,
        adam_step,
        cp.epochs_done,
        cp.word_pos()?,
    )
}

/// Rebuild a RunConfig from the snapshot stored in manifests/checkpoints.
pub fn run_config_from_snapshot(snapshot: &Value) -> Result<RunConfig> {
    // Route through the normal parser for identical validation.
    let tmp = std::env::temp_dir().join(format!(
        "connector-snapshot-{}-{:x}.json",
        std::process::id(),
        std::ptr::from_ref(snapshot) as usize
    ));
    std::fs::write(&tmp, serde_json::to_string(snapshot).unwrap())
        .map_err(|e| Error::data(format!("cannot stage config snapshot: {e}")))?;
    let out = parse_config(&tmp);
    let _ = std::fs::remove_file(&tmp);
    out
}

/// Node-classification evaluation used by `connector evaluate`: load a
/// word2vec embedding file and a `token class` label file, join on
/// tokens, stratified-split, fit the logistic probe, score the test side.
pub fn evaluate_node_classification(
    embeddings_path: &Path,
    labels_path: &Path,
    train_ratio: f64,
    seed: u64,
) -> Result<ClassificationMetrics> {
    let (tokens, table) = load_embeddings(embeddings_path)?;
    let label_lines = loaders::read_label_file(labels_path)?;
    let mut class_names: Vec<String> = Vec::new();
    let mut by_token: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (token, class) in &label_lines {
        let id = match class_names.iter().position(|c| c == class) {
            Some(i) => i,
            None => {
                class_names.push(class.clone());
                class_names.len() - 1
            }
        };
        by_token.insert(token.as_str(), id);
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0usize;
    for (i, token) in tokens.iter().enumerate() {
        match by_token.get(token.as_str()) {
            Some(&class) => {
                rows.push(table.input_row(i).to_vec());
                labels.push(class);
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        warn_log!("{skipped} embedding rows have no label and were skipped");
    }
    if labels.is_empty() {
        return Err(Error::data(
            "no embedding tokens matched the label file",
        ));
    }
    let vectors = DenseMatrix::from_rows(&rows);
    let set = LabeledEmbeddingSet::new(vectors, labels)?;
    let split = eval::split_nodes(&set.labels, train_ratio, seed)?;
    let w = eval::train_logreg(&set, &split.train, 1e-4, 500, 0.5)?;
    eval::classify_and_score(&w, &set, &split.test)
}

/// Result bundle of one training run, as written to the output directory.
pub struct TrainArtifacts {
    /// (token, vector) rows of the primary embedding file.
    pub tokens: Vec<String>,
    pub embedding: EmbeddingTable,
    /// Extra embedding files keyed by file stem (e.g. target vectors).
    pub extra_embeddings: Vec<(String, Vec<String>, DenseMatrix)>,
    /// Flat key/value metrics.
    pub metrics: Vec<(String, Value)>,
    pub checkpoint: Option<Checkpoint>,
}

fn table_from_matrix(m: &DenseMatrix) -> EmbeddingTable {
    EmbeddingTable::from_input_rows((0..m.rows()).map(|i| m.row(i).to_vec()).collect())
        .expect("rows share a dimension")
}

/// Train the configured model and collect its artifacts. This is the
/// library path behind `connector train`.
pub fn train_model(cfg: &RunConfig) -> Result<TrainArtifacts> {
    let graph_spec = cfg
        .graph
        .as_ref()
        .ok_or_else(|| Error::usage("config has no \"graph\" section"))?;
    graph_spec.validate()?;
    match cfg.model.as_str() {
        "deepwalk" | "node2vec" | "struc2vec" => train_homogeneous_walker(cfg, graph_spec),
        "metapath2vec" => train_metapath(cfg, graph_spec),
        "hope" => train_hope(cfg, graph_spec),
        "sine" => train_sine_model(cfg, graph_spec),
        "transe" | "transh" | "transr" => train_kge_model(cfg, graph_spec),
        "gcn" | "graphsage" | "gin" | "gat" => train_gnn_model(cfg, graph_spec),
        other => Err(Error::usage(format!("unknown model {other:?}"))),
    }
}

fn edges_path(spec: &DatasetSpec) -> Result<&Path> {
    spec.path(FileRole::Edges)
        .ok_or_else(|| Error::usage("dataset has no edges file"))
}

/// Generate the walk corpus for a walk-based model (used by both train
/// and the `walk` subcommand).
pub fn generate_walks(cfg: &RunConfig) -> Result<(Vec<String>, crate::walks::WalkCorpus)> {
    let graph_spec = cfg
        .graph
        .as_ref()
        .ok_or_else(|| Error::usage("config has no \"graph\" section"))?;
    match cfg.model.as_str() {
        "deepwalk" | "node2vec" | "struc2vec" => {
            let lg = loaders::load_edge_list(
                edges_path(graph_spec)?,
                graph_spec.directed,
                graph_spec.weighted,
            )?;
            let wcfg = walk_config(cfg)?;
            let corpus = match cfg.model.as_str() {
                "deepwalk" => crate::walks::uniform_walks(&lg.graph, &wcfg)?,
                "node2vec" => crate::walks::node2vec_walks(&lg.graph, &wcfg)?,
                _ => {
                    let k_max = param_usize(&cfg.params, "k_max")?;
                    let stay = param_f64(&cfg.params, "stay_prob")?;
                    let ctx = crate::walks::struc2vec_context(&lg.graph, k_max)?;
                    crate::walks::struc2vec_walks(&ctx, &wcfg, stay)?
                }
            };
            Ok((lg.tokens.tokens().to_vec(), corpus))
        }
        "metapath2vec" => {
            let (lh, metapath) = load_hetero_with_metapath(cfg, graph_spec)?;
            let wcfg = walk_config(cfg)?;
            let corpus = crate::walks::metapath_walks(&lh.graph, &metapath, &wcfg)?;
            Ok((lh.tokens.tokens().to_vec(), corpus))
        }
        other => Err(Error::usage(format!(
            "model {other:?} does not generate walks"
        ))),
    }
}

fn train_homogeneous_walker(cfg: &RunConfig, _spec: &DatasetSpec) -> Result<TrainArtifacts> {
    let (tokens, corpus) = generate_walks(cfg)?;
    let vocab = crate::sgns::build_vocab(&corpus)?;
    let scfg = sgns_config(cfg, false)?;
    let table = crate::sgns::train_sgns(&corpus, &vocab, &scfg, None)?;
    let emb_tokens: Vec<String> = vocab
        .tokens()
        .iter()
        .map(|&node| tokens[node].clone())
        .collect();
    let metrics = vec![
        ("nodes".to_string(), json!(tokens.len())),
        ("corpus_walks".to_string(), json!(corpus.walks.len())),
        ("corpus_tokens".to_string(), json!(corpus.num_tokens())),
        ("vocab".to_string(), json!(vocab.len())),
    ];
    Ok(TrainArtifacts {
        tokens: emb_tokens,
        embedding: table,
        extra_embeddings: vec![],
        metrics,
        checkpoint: None,
    })
}

fn load_hetero_with_metapath(
    cfg: &RunConfig,
    spec: &DatasetSpec,
) -> Result<(loaders::LoadedHeteroGraph, Vec<usize>)> {
    let nodes = spec
        .path(FileRole::Nodes)
        .ok_or_else(|| Error::usage("heterogeneous dataset needs a nodes file"))?;
    let lh = loaders::load_hetero(nodes, edges_path(spec)?)?;
    let metapath_val = cfg
        .params
        .get("metapath")
        .ok_or_else(|| Error::usage("metapath2vec requires the \"metapath\" parameter"))?;
    let names = metapath_val
        .as_array()
        .ok_or_else(|| Error::usage("\"metapath\" must be an array of type names"))?;
    let mut metapath = Vec::with_capacity(names.len());
    for v in names {
        let name = v
            .as_str()
            .ok_or_else(|| Error::usage("\"metapath\" entries must be strings"))?;
        let ty = lh.graph.type_id(name).ok_or_else(|| {
            Error::usage(format!(
                "metapath type {name:?} not present; node types: {}",
                lh.graph.type_names().join(", ")
            ))
        })?;
        metapath.push(ty);
    }
    Ok((lh, metapath))
}

fn train_metapath(cfg: &RunConfig, spec: &DatasetSpec) -> Result<TrainArtifacts> {
    let (lh, metapath) = load_hetero_with_metapath(cfg, spec)?;
    let wcfg = walk_config(cfg)?;
    let corpus = crate::walks::metapath_walks(&lh.graph, &metapath, &wcfg)?;
    let vocab = crate::sgns::build_vocab(&corpus)?;
    let hetero_negatives = param_bool(&cfg.params, "hetero_negatives")?;
    let scfg = sgns_config(cfg, hetero_negatives)?;
    let table = crate::sgns::train_sgns(&corpus, &vocab, &scfg, Some(lh.graph.node_types()))?;
    let emb_tokens: Vec<String> = vocab
        .tokens()
        .iter()
        .map(|&node| lh.tokens.token(node).to_string())
        .collect();
    let metrics = vec![
        ("nodes".to_string(), json!(lh.graph.base.num_nodes())),
        ("node_types".to_string(), json!(lh.graph.num_types())),
        ("corpus_walks".to_string(), json!(corpus.walks.len())),
        ("vocab".to_string(), json!(vocab.len())),
    ];
    Ok(TrainArtifacts {
        tokens: emb_tokens,
        embedding: table,
        extra_embeddings: vec![],
        metrics,
        checkpoint: None,
    })
}

fn train_hope(cfg: &RunConfig, spec: &DatasetSpec) -> Result<TrainArtifacts> {
    let lg = loaders::load_edge_list(edges_path(spec)?, spec.directed, spec.weighted)?;
    let dim = param_usize(&cfg.params, "dim")?;
    let beta = match cfg.params.get("beta") {
        Some(Value::Null) | None => None,
        Some(v) => Some(v.as_f64().ok_or_else(|| {
            Error::usage("parameter \"beta\" must be a number")
        })?),
    };
    let beta = crate::spectral::resolve_beta(&lg.graph, beta)?;
    let (src, tgt) =
        crate::spectral::hope_embed(&lg.graph, &crate::spectral::KatzConfig { beta: Some(beta), dim })?;
    let tokens = lg.tokens.tokens().to_vec();
    let metrics = vec![
        ("nodes".to_string(), json!(lg.graph.num_nodes())),
        ("beta".to_string(), json!(beta)),
        ("dim".to_string(), json!(dim)),
    ];
    Ok(TrainArtifacts {
        tokens: tokens.clone(),
        embedding: table_from_matrix(&src),
        extra_embeddings: vec![("embeddings_target".to_string(), tokens, tgt)],
        metrics,
        checkpoint: None,
    })
}

fn train_sine_model(cfg: &RunConfig, spec: &DatasetSpec) -> Result<TrainArtifacts> {
    let ls = loaders::load_signed_edge_list(edges_path(spec)?)?;
    let scfg = crate::signed::SineConfig {
        dim: param_usize(&cfg.params, "dim")?,
        delta: param_f64(&cfg.params, "delta")?,
        delta0: param_f64(&cfg.params, "delta0")?,
        lambda: param_f64(&cfg.params, "lambda")?,
        lr: param_f64(&cfg.params, "lr")?,
        epochs: param_usize(&cfg.params, "epochs")?,
        seed: cfg.seed,
        symmetrize: param_bool(&cfg.params, "symmetrize")?,
    };
    let (table, trajectory) = crate::signed::train_sine(&ls.graph, &scfg)?;
    // The trailing virtual row is dropped on save.
    let table = table.without_last_row();
    let metrics = vec![
        ("nodes".to_string(), json!(ls.graph.base.num_nodes())),
        ("positive_arcs".to_string(), json!(ls.graph.positive_arcs())),
        ("negative_arcs".to_string(), json!(ls.graph.negative_arcs())),
        (
            "final_objective".to_string(),
            json!(trajectory.last().copied()),
        ),
    ];
    Ok(TrainArtifacts {
        tokens: ls.tokens.tokens().to_vec(),
        embedding: table,
        extra_embeddings: vec![],
        metrics,
        checkpoint: None,
    })
}

fn load_kg(spec: &DatasetSpec) -> Result<KnowledgeGraph> {
    let need = |role: FileRole| {
        spec.path(role)
            .ok_or_else(|| Error::usage(format!("knowledge dataset needs a {role:?} file")))
    };
    loaders::load_triples(need(FileRole::Train)?, need(FileRole::Valid)?, need(FileRole::Test)?)
}

fn train_kge_model(cfg: &RunConfig, spec: &DatasetSpec) -> Result<TrainArtifacts> {
    let kg = load_kg(spec)?;
    let kcfg = kge_config(&cfg.model, cfg)?;
    let mut trainer = KgeTrainer::new(&kg, &kcfg)?;
    trainer.run_epochs(&kg, kcfg.epochs)?;
    let mut metrics = vec![
        ("entities".to_string(), json!(kg.num_entities())),
        ("relations".to_string(), json!(kg.num_relations())),
        (
            "first_epoch_loss".to_string(),
            json!(trainer.loss_trajectory.first().copied()),
        ),
        (
            "final_epoch_loss".to_string(),
            json!(trainer.loss_trajectory.last().copied()),
        ),
    ];
    if !kg.test.is_empty() {
        for (tag, filtered) in [("raw", false), ("filtered", true)] {
            let m = crate::kge::evaluate_ranking_threaded(
                &trainer.model,
                &kg,
                filtered,
                cfg.effective_threads(),
            )?;
            metrics.push((format!("mr_{tag}"), json!(m.mr)));
            metrics.push((format!("mrr_{tag}"), json!(m.mrr)));
            metrics.push((format!("hits1_{tag}"), json!(m.hits1)));
            metrics.push((format!("hits3_{tag}"), json!(m.hits3)));
            metrics.push((format!("hits10_{tag}"), json!(m.hits10)));
        }
    }
    let entity_matrix = DenseMatrix::from_rows(
        &(0..kg.num_entities())
            .map(|e| trainer.model.entity_vec(e).to_vec())
            .collect::<Vec<_>>(),
    );
    let relation_matrix = DenseMatrix::from_rows(
        &(0..kg.num_relations())
            .map(|r| trainer.model.relation_vec(r).to_vec())
            .collect::<Vec<_>>(),
    );
    let checkpoint = kge_checkpoint(cfg, &trainer);
    Ok(TrainArtifacts {
        tokens: kg.entity_names.clone(),
        embedding: table_from_matrix(&entity_matrix),
        extra_embeddings: vec![(
            "relations".to_string(),
            kg.relation_names.clone(),
            relation_matrix,
        )],
        metrics,
        checkpoint: Some(checkpoint),
    })
}

fn train_gnn_model(cfg: &RunConfig, spec: &DatasetSpec) -> Result<TrainArtifacts> {
    let mut lg = loaders::load_edge_list(edges_path(spec)?, spec.directed, spec.weighted)?;
    let features = spec.path(FileRole::Features);
    let labels = spec.path(FileRole::Labels);
    if features.is_none() {
        return Err(Error::usage("GNN models need a \"features\" file"));
    }
    if labels.is_none() {
        return Err(Error::usage("GNN models need a \"labels\" file"));
    }
    loaders::load_features_labels(features, labels, &mut lg)?;
    let gcfg = gnn_config(&cfg.model, cfg)?;
    let split = gnn_split(
        lg.graph.labels.as_ref().unwrap(),
        param_f64(&cfg.params, "train_ratio")?,
        param_f64(&cfg.params, "valid_ratio")?,
        cfg.seed,
    )?;
    let ops = GraphOps::new(&lg.graph)?;
    let num_classes = lg.label_names.len().max(1);
    let in_dim = lg.graph.features.as_ref().unwrap().cols();
    let mut trainer = GnnTrainer::new(&gcfg, in_dim, num_classes)?;
    trainer.run_epochs(&lg.graph, &ops, &split, gcfg.epochs)?;
    let checkpoint = gnn_checkpoint(cfg, &trainer);
    let epochs_run = trainer.epochs_done;
    let outcome = trainer.finish(&lg.graph, &ops, &split)?;
    let metrics = vec![
        ("nodes".to_string(), json!(lg.graph.num_nodes())),
        ("classes".to_string(), json!(num_classes)),
        ("epochs_run".to_string(), json!(epochs_run)),
        ("test_accuracy".to_string(), json!(outcome.test_accuracy)),
        (
            "final_train_loss".to_string(),
            json!(outcome.curve.last().map(|s| s.train_loss)),
        ),
    ];
    let tokens = lg.tokens.tokens().to_vec();
    Ok(TrainArtifacts {
        tokens: tokens.clone(),
        embedding: table_from_matrix(&outcome.penultimate),
        extra_embeddings: vec![("logits".to_string(), tokens, outcome.logits)],
        metrics,
        checkpoint: Some(checkpoint),
    })
}

/// Stratified train/valid/test split over the labeled nodes.
fn gnn_split(
    labels: &[Option<usize>],
    train_ratio: f64,
    valid_ratio: f64,
    seed: u64,
) -> Result<NodeSplit> {
    if !(train_ratio > 0.0 && valid_ratio >= 0.0 && train_ratio + valid_ratio < 1.0) {
        return Err(Error::usage(
            "need train_ratio > 0, valid_ratio >= 0 and train_ratio + valid_ratio < 1",
        ));
    }
    let labeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::data("no labeled nodes"));
    }
    let dense_labels: Vec<usize> = labeled.iter().map(|&i| labels[i].unwrap()).collect();
    let first = eval::split_nodes(&dense_labels, train_ratio, seed)?;
    let train: Vec<usize> = first.train.iter().map(|&i| labeled[i]).collect();
    let rest: Vec<usize> = first.test.clone();
    let rest_ratio = valid_ratio / (1.0 - train_ratio);
    let (valid, test) = if rest.is_empty() || rest_ratio <= 0.0 {
        (Vec::new(), rest.iter().map(|&i| labeled[i]).collect())
    } else {
        let rest_labels: Vec<usize> = rest.iter().map(|&i| dense_labels[i]).collect();
        let second = eval::split_nodes(&rest_labels, rest_ratio.min(0.99), seed ^ 1)?;
        (
            second.train.iter().map(|&i| labeled[rest[i]]).collect(),
            second.test.iter().map(|&i| labeled[rest[i]]).collect(),
        )
    };
    Ok(NodeSplit { train, valid, test })
}
